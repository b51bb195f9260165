//! Browser bindings for three interactive views.
//!
//! Every export takes plain numbers or strings and returns a JSON string, so
//! the same functions are exercised natively by the tests. Failures come back
//! as `{"error": "..."}` rather than as thrown exceptions.

use dipo_core::brr::{reallocate, reallocation_advantages};
use dipo_core::config::RunConfig;
use dipo_core::psd::{select_threshold, Candidate, ThresholdReason};
use dipo_core::reward::{classify_group, group_advantages, RewardVector};
use dipo_core::simulator::{entropy_trend, run_entropy_experiment, EntropyMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

/// Largest synthetic queue and longest entropy run the page will request.
const MAX_RECORDS: usize = 20_000;
const MAX_STEPS: usize = 2_000;

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    let value = match result {
        Ok(v) => serde_json::to_value(v).map_err(|e| e.to_string()),
        Err(e) => Err(e),
    };
    match value {
        Ok(v) => v.to_string(),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[derive(Serialize)]
struct PsdView {
    correct: Vec<f64>,
    error: Vec<f64>,
    candidates: Vec<Candidate>,
    tau_star: Option<f64>,
    reason: ThresholdReason,
}

/// Synthetic queue with two PPL clusters, then the full threshold sweep.
///
/// Correct rollouts draw PPL from `1 + |0.5 + u|` and errors from
/// `1 + |0.5 + separation + u|` with `u` uniform on `[-spread, spread]`.
#[wasm_bindgen]
pub fn psd_explorer(n_correct: usize, n_error: usize, separation: f64, spread: f64, n_min: usize, seed: u64) -> String {
    respond(psd_view(n_correct, n_error, separation, spread, n_min, seed))
}

fn psd_view(n_correct: usize, n_error: usize, separation: f64, spread: f64, n_min: usize, seed: u64) -> Result<PsdView, String> {
    if n_correct + n_error > MAX_RECORDS {
        return Err(format!("at most {MAX_RECORDS} records"));
    }
    if !(separation.is_finite() && spread.is_finite() && spread >= 0.0) {
        return Err("separation must be finite and spread non-negative".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |centre: f64| {
        let u = if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 };
        1.0 + (centre + u).abs()
    };
    let correct: Vec<f64> = (0..n_correct).map(|_| draw(0.5)).collect();
    let error: Vec<f64> = (0..n_error).map(|_| draw(0.5 + separation)).collect();
    let snapshot: Vec<(f64, u8)> = correct
        .iter()
        .map(|&p| (p, 1))
        .chain(error.iter().map(|&p| (p, 0)))
        .collect();
    let report = select_threshold(&snapshot, n_min);
    Ok(PsdView {
        correct,
        error,
        candidates: report.candidates,
        tau_star: report.tau_star,
        reason: report.reason,
    })
}

#[derive(Serialize)]
struct ReallocationView {
    class: String,
    direction: String,
    changed_index: Option<usize>,
    rewards: Vec<u8>,
    rewards_r: Vec<u8>,
    advantages: Vec<f64>,
    advantages_r: Vec<f64>,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad {what} value `{s}`")))
        .collect()
}

/// One group through reallocation. `rewards` and `ppls` are comma or space
/// separated lists; a non-finite `tau` means no threshold is available.
#[wasm_bindgen]
pub fn reallocate_group(rewards: &str, ppls: &str, tau: f64) -> String {
    respond(reallocation_view(rewards, ppls, tau))
}

fn reallocation_view(rewards: &str, ppls: &str, tau: f64) -> Result<ReallocationView, String> {
    let rewards = RewardVector::new(parse_list(rewards, "reward")?).map_err(|e| e.to_string())?;
    let ppls: Vec<f64> = parse_list(ppls, "PPL")?;
    let tau = tau.is_finite().then_some(tau);
    let outcome = reallocate(&rewards, &ppls, tau).map_err(|e| e.to_string())?;
    Ok(ReallocationView {
        class: format!("{:?}", classify_group(&rewards)),
        direction: format!("{:?}", outcome.direction),
        changed_index: outcome.changed_index,
        rewards: rewards.values().to_vec(),
        rewards_r: outcome.rewards_r.values().to_vec(),
        advantages: group_advantages(&rewards).values().to_vec(),
        advantages_r: reallocation_advantages(&outcome).values().to_vec(),
    })
}

#[derive(Serialize)]
struct EntropyView {
    h_avg: Vec<f64>,
    spearman: Option<f64>,
}

/// Average entropy per step while rewarding (`"reward"`) or penalising
/// (`"penalty"`) the maximum-PPL rollout of every group, on a small task set.
#[wasm_bindgen]
pub fn entropy_curve(mode: &str, steps: usize, eta: f64, seed: u64) -> String {
    respond(entropy_view(mode, steps, eta, seed))
}

fn entropy_view(mode: &str, steps: usize, eta: f64, seed: u64) -> Result<EntropyView, String> {
    let mode: EntropyMode = mode.parse().map_err(|e: dipo_core::DipoError| e.to_string())?;
    if steps > MAX_STEPS {
        return Err(format!("at most {MAX_STEPS} steps"));
    }
    let cfg = RunConfig {
        steps,
        eta,
        seed,
        num_tasks: 16,
        batch_groups: 16,
        log_ppls: false,
        ..RunConfig::default()
    };
    let run = run_entropy_experiment(&cfg, mode).map_err(|e| e.to_string())?;
    Ok(EntropyView {
        h_avg: run.log.series(|r| r.h_avg),
        spearman: entropy_trend(&run.log),
    })
}
