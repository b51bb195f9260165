//! Plot-ready CSV files derived from a run log.
//!
//! Every function here is a pure function of the log, so exporting the same
//! run twice yields byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{DipoError, Result};
use crate::simulator::RunLog;
use crate::stats;

pub const HIST_BINS: usize = 64;

pub const GROUP_PROPORTIONS: &str = "group_proportions.csv";
pub const PPL_HIST: &str = "ppl_hist.csv";
pub const ENTROPY: &str = "entropy.csv";
pub const TAU: &str = "tau.csv";
pub const SUMMARY: &str = "summary.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn group_proportions_csv(log: &RunLog) -> String {
    let mut out = String::from("step,hard,easy,normal\n");
    for r in &log.records {
        writeln!(out, "{},{},{},{}", r.step, r.hard_frac, r.easy_frac, r.normal_frac).unwrap();
    }
    out
}

pub fn entropy_csv(log: &RunLog) -> String {
    let mut out = String::from("step,h_avg\n");
    for r in &log.records {
        writeln!(out, "{},{}", r.step, r.h_avg).unwrap();
    }
    out
}

pub fn tau_csv(log: &RunLog) -> String {
    let mut out = String::from("step,tau_star,reason\n");
    for r in &log.records {
        writeln!(out, "{},{},{:?}", r.step, opt(r.tau_star), r.tau_reason).unwrap();
    }
    out
}

/// Uniform bin edges over the 1st..99th percentile of every logged PPL.
pub fn histogram_range(log: &RunLog) -> (f64, f64) {
    let all: Vec<f64> = log
        .records
        .iter()
        .flat_map(|r| r.ppl_correct.iter().chain(&r.ppl_error).copied())
        .collect();
    match (stats::percentile(&all, 1.0), stats::percentile(&all, 99.0)) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => (1.0, 1.0),
    }
}

/// Bin index with out-of-range values clamped to the edge bins.
pub fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let raw = ((x - lo) / (hi - lo) * bins as f64).floor();
    (raw.max(0.0) as usize).min(bins - 1)
}

/// One row per step: shared range, then correct and error counts per bin.
pub fn ppl_hist_csv(log: &RunLog) -> String {
    let (lo, hi) = histogram_range(log);
    let mut out = String::from("step,bin_lo,bin_hi");
    for prefix in ["correct", "error"] {
        for b in 0..HIST_BINS {
            write!(out, ",{prefix}_{b}").unwrap();
        }
    }
    out.push('\n');
    for r in &log.records {
        write!(out, "{},{lo},{hi}", r.step).unwrap();
        for values in [&r.ppl_correct, &r.ppl_error] {
            let mut counts = [0usize; HIST_BINS];
            for &x in values {
                counts[bin_of(x, lo, hi, HIST_BINS)] += 1;
            }
            for c in counts {
                write!(out, ",{c}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// `metric,value` rows summarising the run.
pub fn summary_csv(log: &RunLog) -> String {
    let hard = stats::moving_average(&log.series(|r| r.hard_frac), 20);
    let easy = stats::moving_average(&log.series(|r| r.easy_frac), 20);
    let evals: Vec<f64> = log.records.iter().filter_map(|r| r.eval_accuracy).collect();
    let taus: Vec<f64> = log.records.iter().filter_map(|r| r.tau_star).collect();
    let sum = |f: fn(&crate::simulator::StepRecord) -> usize| log.records.iter().map(f).sum::<usize>();

    let rows: Vec<(&str, String)> = vec![
        ("steps", log.records.len().to_string()),
        ("hard_smoothed_first", opt(hard.first().copied())),
        ("hard_smoothed_last", opt(hard.last().copied())),
        ("easy_smoothed_first", opt(easy.first().copied())),
        ("easy_smoothed_last", opt(easy.last().copied())),
        ("hard_trend", opt(stats::trend(&hard))),
        ("easy_trend", opt(stats::trend(&easy))),
        ("h_avg_trend", opt(stats::trend(&log.series(|r| r.h_avg)))),
        ("eval_first", opt(evals.first().copied())),
        ("eval_last", opt(evals.last().copied())),
        ("tau_selected_steps", taus.len().to_string()),
        ("tau_mean", opt(stats::mean(&taus))),
        ("realloc_exploration", sum(|r| r.realloc_exploration).to_string()),
        ("realloc_exploitation", sum(|r| r.realloc_exploitation).to_string()),
    ];
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        writeln!(out, "{k},{v}").unwrap();
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| DipoError::invalid(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Writes the four plot files into `dir`.
pub fn write_exports(log: &RunLog, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_file(dir, GROUP_PROPORTIONS, &group_proportions_csv(log))?,
        write_file(dir, PPL_HIST, &ppl_hist_csv(log))?,
        write_file(dir, ENTROPY, &entropy_csv(log))?,
        write_file(dir, TAU, &tau_csv(log))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::simulator::run_training;

    fn small_log() -> RunLog {
        let cfg = RunConfig {
            steps: 8,
            num_tasks: 10,
            batch_groups: 10,
            group_size: 4,
            seq_len: 3,
            vocab_size: 6,
            ..RunConfig::default()
        };
        run_training(&cfg).unwrap().log
    }

    #[test]
    fn row_counts_match_steps() {
        let log = small_log();
        for csv in [group_proportions_csv(&log), ppl_hist_csv(&log), entropy_csv(&log), tau_csv(&log)] {
            assert_eq!(csv.lines().count(), log.records.len() + 1);
        }
    }

    #[test]
    fn proportions_sum_to_one() {
        let csv = group_proportions_csv(&small_log());
        for line in csv.lines().skip(1) {
            let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_counts_every_rollout() {
        let log = small_log();
        let csv = ppl_hist_csv(&log);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 3 + 2 * HIST_BINS);
        for (line, r) in csv.lines().skip(1).zip(&log.records) {
            let cols: Vec<&str> = line.split(',').collect();
            let correct: usize = cols[3..3 + HIST_BINS].iter().map(|v| v.parse::<usize>().unwrap()).sum();
            let error: usize = cols[3 + HIST_BINS..].iter().map(|v| v.parse::<usize>().unwrap()).sum();
            assert_eq!(correct, r.ppl_correct.len());
            assert_eq!(error, r.ppl_error.len());
        }
    }

    #[test]
    fn binning_clamps() {
        assert_eq!(bin_of(0.0, 1.0, 2.0, 64), 0);
        assert_eq!(bin_of(5.0, 1.0, 2.0, 64), 63);
        assert_eq!(bin_of(2.0, 1.0, 2.0, 64), 63);
        assert_eq!(bin_of(1.5, 1.0, 2.0, 64), 32);
        assert_eq!(bin_of(3.0, 1.0, 1.0, 64), 0);
    }

    #[test]
    fn tau_reasons_when_never_selected() {
        let mut log = small_log();
        for r in &mut log.records {
            r.tau_star = None;
            r.tau_reason = crate::psd::ThresholdReason::InsufficientData;
        }
        let csv = tau_csv(&log);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",,InsufficientData")));
    }

    #[test]
    fn exports_are_deterministic() {
        let log = small_log();
        let dir = std::env::temp_dir().join(format!("dipo-export-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let first: Vec<Vec<u8>> = write_exports(&log, &dir).unwrap().iter().map(|p| std::fs::read(p).unwrap()).collect();
        let second: Vec<Vec<u8>> = write_exports(&log, &dir).unwrap().iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        std::fs::remove_dir_all(&dir).unwrap();
        assert!(summary_csv(&log).starts_with("metric,value\nsteps,8\n"));
    }
}
