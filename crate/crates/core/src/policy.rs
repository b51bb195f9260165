//! Tabular softmax sequence policy.
//!
//! Every `(query, position)` pair owns an independent row of `V` logits, so a
//! gradient step on one query never moves another query's distribution. The
//! token emitted at position `t` does not condition later positions; a rollout
//! is `L` independent draws from the rows of its query.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brr::{reallocate, reallocation_advantages, Direction};
use crate::error::{DipoError, Result};
use crate::perplexity::sequence_ppl;
use crate::reward::{classify_group, group_advantages, AdvantageVector, GroupClass, RewardVector, Rewarded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    num_queries: usize,
    seq_len: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

fn softmax_into(logits: &[f64], scale: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = ((l - max) * scale).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

impl PolicyTable {
    /// Uniform policy (all logits zero).
    pub fn uniform(num_queries: usize, seq_len: usize, vocab_size: usize) -> Result<Self> {
        if num_queries == 0 || seq_len == 0 || vocab_size < 2 {
            return Err(DipoError::invalid(format!(
                "policy dimensions must be positive with V >= 2 (Q={num_queries}, L={seq_len}, V={vocab_size})"
            )));
        }
        Ok(Self {
            num_queries,
            seq_len,
            vocab_size,
            logits: vec![0.0; num_queries * seq_len * vocab_size],
        })
    }

    pub fn from_logits(
        num_queries: usize,
        seq_len: usize,
        vocab_size: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        let mut p = Self::uniform(num_queries, seq_len, vocab_size)?;
        if logits.len() != p.logits.len() {
            return Err(DipoError::invalid(format!(
                "expected {} logits, got {}",
                p.logits.len(),
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(DipoError::invalid("non-finite logit"));
        }
        p.logits = logits;
        Ok(p)
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn all_logits(&self) -> &[f64] {
        &self.logits
    }

    fn offset(&self, query: usize, position: usize) -> usize {
        debug_assert!(query < self.num_queries && position < self.seq_len);
        (query * self.seq_len + position) * self.vocab_size
    }

    pub fn logits(&self, query: usize, position: usize) -> &[f64] {
        let o = self.offset(query, position);
        &self.logits[o..o + self.vocab_size]
    }

    pub fn logits_mut(&mut self, query: usize, position: usize) -> &mut [f64] {
        let o = self.offset(query, position);
        &mut self.logits[o..o + self.vocab_size]
    }

    pub fn probs(&self, query: usize, position: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size];
        softmax_into(self.logits(query, position), 1.0, &mut out);
        out
    }

    pub fn log_probs(&self, query: usize, position: usize) -> Vec<f64> {
        log_softmax(self.logits(query, position))
    }

    fn same_shape(&self, other: &PolicyTable) -> bool {
        self.num_queries == other.num_queries
            && self.seq_len == other.seq_len
            && self.vocab_size == other.vocab_size
    }

    fn check_query(&self, query: usize) -> Result<()> {
        if query >= self.num_queries {
            return Err(DipoError::invalid(format!(
                "query {query} out of range (0..{})",
                self.num_queries
            )));
        }
        Ok(())
    }

    /// Gradient ascent: `logits += step * grad`.
    pub fn apply(&mut self, grad: &LogitGrad, step: f64) {
        for (l, g) in self.logits.iter_mut().zip(&grad.values) {
            *l += step * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<u32>,
    /// Untempered log-probabilities of the sampled tokens under the rollout policy.
    pub logprobs_old: Vec<f64>,
    pub ppl: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Draws `g` rollouts for `query` from `softmax(logits / temperature)`.
pub fn sample_group<R: Rng + ?Sized>(
    policy: &PolicyTable,
    query: usize,
    g: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DipoError::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    policy.check_query(query)?;

    let (l, v) = (policy.seq_len, policy.vocab_size);
    let mut tempered = vec![vec![0.0; v]; l];
    let mut untempered = Vec::with_capacity(l);
    for (t, row) in tempered.iter_mut().enumerate() {
        softmax_into(policy.logits(query, t), 1.0 / temperature, row);
        untempered.push(policy.log_probs(query, t));
    }

    let rollouts = (0..g)
        .map(|_| {
            let mut tokens = Vec::with_capacity(l);
            let mut logprobs = Vec::with_capacity(l);
            for t in 0..l {
                let y = sample_categorical(&tempered[t], rng);
                tokens.push(y as u32);
                logprobs.push(untempered[t][y]);
            }
            let ppl = sequence_ppl(&logprobs).expect("log-softmax values are <= 0");
            Rollout {
                tokens,
                logprobs_old: logprobs,
                ppl,
            }
        })
        .collect();
    Ok(rollouts)
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the cumulative sum just under 1
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn token_entropy(policy: &PolicyTable, query: usize, position: usize) -> f64 {
    entropy_of(&policy.probs(query, position))
}

/// Average token entropy over the contexts visited by `rollouts` of `query`.
pub fn mean_entropy(policy: &PolicyTable, query: usize, rollouts: &[Rollout]) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    let per_position: Vec<f64> = (0..policy.seq_len)
        .map(|t| token_entropy(policy, query, t))
        .collect();
    rollouts
        .iter()
        .map(|o| {
            let n = o.len().min(policy.seq_len);
            per_position[..n].iter().sum::<f64>() / n as f64
        })
        .sum::<f64>()
        / rollouts.len() as f64
}

/// A query's rollouts with their verification rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub query: usize,
    pub rollouts: Vec<Rollout>,
    pub rewards: RewardVector,
}

impl Group {
    pub fn ppls(&self) -> Vec<f64> {
        self.rollouts.iter().map(|o| o.ppl).collect()
    }

    pub fn class(&self) -> GroupClass {
        classify_group(&self.rewards)
    }
}

impl Rewarded for Group {
    fn rewards(&self) -> &RewardVector {
        &self.rewards
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipRange {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
        }
    }
}

/// Dense gradient over the full logit table.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrad {
    pub values: Vec<f64>,
}

impl LogitGrad {
    pub fn zeros_like(policy: &PolicyTable) -> Self {
        Self {
            values: vec![0.0; policy.logits.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &LogitGrad, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&g| g == 0.0)
    }
}

/// Token-level clipped surrogate of one group and its gradient w.r.t. the
/// current logits. `old` is the rollout policy; each rollout's recorded
/// log-probabilities must agree with it.
pub fn dapo_objective_grad(
    policy: &PolicyTable,
    old: &PolicyTable,
    query: usize,
    rollouts: &[Rollout],
    advantages: &AdvantageVector,
    clip: ClipRange,
) -> Result<(f64, LogitGrad)> {
    let mut grad = LogitGrad::zeros_like(policy);
    let obj = accumulate_surrogate(policy, old, query, rollouts, advantages, clip, 1.0, &mut grad)?;
    Ok((obj, grad))
}

/// Adds `weight * d(objective)/d(logits)` for one group into `grad` and returns
/// the unweighted objective.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_surrogate(
    policy: &PolicyTable,
    old: &PolicyTable,
    query: usize,
    rollouts: &[Rollout],
    advantages: &AdvantageVector,
    clip: ClipRange,
    weight: f64,
    grad: &mut LogitGrad,
) -> Result<f64> {
    if !policy.same_shape(old) {
        return Err(DipoError::invalid("snapshot policy has a different shape"));
    }
    policy.check_query(query)?;
    if advantages.len() != rollouts.len() {
        return Err(DipoError::invalid(format!(
            "{} advantages for {} rollouts",
            advantages.len(),
            rollouts.len()
        )));
    }
    let total_tokens: usize = rollouts.iter().map(Rollout::len).sum();
    if total_tokens == 0 {
        return Ok(0.0);
    }

    let (l, v) = (policy.seq_len, policy.vocab_size);
    let cur_logp: Vec<Vec<f64>> = (0..l).map(|t| policy.log_probs(query, t)).collect();
    let old_logp: Vec<Vec<f64>> = (0..l).map(|t| old.log_probs(query, t)).collect();
    let norm = 1.0 / total_tokens as f64;

    let mut objective = 0.0;
    for (rollout, &adv) in rollouts.iter().zip(advantages.values()) {
        if rollout.len() > l || rollout.logprobs_old.len() != rollout.len() {
            return Err(DipoError::invalid("rollout does not fit the policy table"));
        }
        for (t, (&tok, &lp_old)) in rollout.tokens.iter().zip(&rollout.logprobs_old).enumerate() {
            let y = tok as usize;
            if y >= v {
                return Err(DipoError::invalid(format!("token {y} outside vocabulary")));
            }
            if (old_logp[t][y] - lp_old).abs() > 1e-9 {
                return Err(DipoError::invalid(
                    "rollout log-probabilities do not match the snapshot policy",
                ));
            }
            let ratio = (cur_logp[t][y] - lp_old).exp();
            let clipped = ratio.clamp(1.0 - clip.eps_low, 1.0 + clip.eps_high);
            let unclipped_term = ratio * adv;
            let clipped_term = clipped * adv;
            objective += unclipped_term.min(clipped_term);

            // the clipped branch is strictly smaller: its derivative is zero
            if clipped_term < unclipped_term || adv == 0.0 {
                continue;
            }
            let scale = weight * norm * adv * ratio;
            let o = policy.offset(query, t);
            for (z, g) in grad.values[o..o + v].iter_mut().enumerate() {
                let indicator = if z == y { 1.0 } else { 0.0 };
                *g += scale * (indicator - cur_logp[t][z].exp());
            }
        }
    }
    Ok(objective * norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub eta: f64,
    pub alpha: f64,
    pub clip: ClipRange,
    /// Gradient steps taken per rollout batch. Steps after the first see
    /// ratios away from 1, which is where clipping acts.
    pub reuse: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            alpha: 0.1,
            clip: ClipRange::default(),
            reuse: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub hard: usize,
    pub easy: usize,
    pub normal: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.hard + self.easy + self.normal
    }

    pub fn record(&mut self, class: GroupClass) {
        match class {
            GroupClass::Hard => self.hard += 1,
            GroupClass::Easy => self.easy += 1,
            GroupClass::Normal => self.normal += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReallocationCounts {
    pub exploration: usize,
    pub exploitation: usize,
    pub unchanged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Surrogate under verification rewards (normal groups), before the update.
    pub objective_verification: f64,
    /// Surrogate under reallocated rewards (extreme groups), before the update.
    pub objective_reallocated: f64,
    pub classes: ClassCounts,
    pub reallocations: ReallocationCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dipo,
    Dapo,
}

/// Advantages for one batch, split into the verification-reward term
/// (normal groups) and the reallocated-reward term (extreme groups).
pub struct BatchAdvantages<'a> {
    pub verification: Vec<(&'a Group, AdvantageVector)>,
    pub reallocated: Vec<(&'a Group, AdvantageVector)>,
    pub classes: ClassCounts,
    pub reallocations: ReallocationCounts,
}

pub fn batch_advantages<'a>(groups: &'a [Group], tau_star: Option<f64>) -> Result<BatchAdvantages<'a>> {
    let mut out = BatchAdvantages {
        verification: Vec::new(),
        reallocated: Vec::new(),
        classes: ClassCounts::default(),
        reallocations: ReallocationCounts::default(),
    };
    for group in groups {
        let class = group.class();
        out.classes.record(class);
        if class == GroupClass::Normal {
            out.verification.push((group, group_advantages(&group.rewards)));
            continue;
        }
        let outcome = reallocate(&group.rewards, &group.ppls(), tau_star)?;
        match outcome.direction {
            Direction::EncourageExploration => out.reallocations.exploration += 1,
            Direction::EncourageExploitation => out.reallocations.exploitation += 1,
            _ => out.reallocations.unchanged += 1,
        }
        out.reallocated.push((group, reallocation_advantages(&outcome)));
    }
    Ok(out)
}

/// One update on `J(R) + alpha * J(R_r)`; each term is the mean of the
/// per-group surrogates over the groups it covers.
pub fn dipo_step(
    policy: &mut PolicyTable,
    groups: &[Group],
    tau_star: Option<f64>,
    cfg: &StepConfig,
) -> Result<StepReport> {
    step_impl(policy, groups, tau_star, cfg, Algorithm::Dipo)
}

/// Plain DAPO: only the normal groups contribute. Reallocation is still
/// evaluated so the report carries the same diagnostics.
pub fn dapo_step(
    policy: &mut PolicyTable,
    groups: &[Group],
    tau_star: Option<f64>,
    cfg: &StepConfig,
) -> Result<StepReport> {
    step_impl(policy, groups, tau_star, cfg, Algorithm::Dapo)
}

pub fn train_step(
    algorithm: Algorithm,
    policy: &mut PolicyTable,
    groups: &[Group],
    tau_star: Option<f64>,
    cfg: &StepConfig,
) -> Result<StepReport> {
    step_impl(policy, groups, tau_star, cfg, algorithm)
}

fn step_impl(
    policy: &mut PolicyTable,
    groups: &[Group],
    tau_star: Option<f64>,
    cfg: &StepConfig,
    algorithm: Algorithm,
) -> Result<StepReport> {
    let batch = batch_advantages(groups, tau_star)?;
    let old = policy.clone();
    let mut report = StepReport {
        objective_verification: 0.0,
        objective_reallocated: 0.0,
        classes: batch.classes,
        reallocations: batch.reallocations,
    };

    for pass in 0..cfg.reuse.max(1) {
        let mut grad_v = LogitGrad::zeros_like(policy);
        let mut obj_v = 0.0;
        if !batch.verification.is_empty() {
            let w = 1.0 / batch.verification.len() as f64;
            for (group, adv) in &batch.verification {
                obj_v += w * accumulate_surrogate(policy, &old, group.query, &group.rollouts, adv, cfg.clip, w, &mut grad_v)?;
            }
        }

        // evaluated for both algorithms so their logs stay comparable
        let mut obj_r = 0.0;
        if !batch.reallocated.is_empty() {
            let mut grad_r = LogitGrad::zeros_like(policy);
            let w = 1.0 / batch.reallocated.len() as f64;
            for (group, adv) in &batch.reallocated {
                obj_r += w * accumulate_surrogate(policy, &old, group.query, &group.rollouts, adv, cfg.clip, w, &mut grad_r)?;
            }
            if algorithm == Algorithm::Dipo {
                grad_v.add_scaled(&grad_r, cfg.alpha);
            }
        }

        if pass == 0 {
            report.objective_verification = obj_v;
            report.objective_reallocated = obj_r;
        }
        policy.apply(&grad_v, cfg.eta);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// `H[i][t]` at the context of token `t` of rollout `i`.
    pub per_token_h: Vec<Vec<f64>>,
    pub h_avg: f64,
    pub b_terms: Vec<Vec<f64>>,
    pub f_terms: Vec<Vec<f64>>,
    /// First-order change of `h_avg` after one ascent step of size `eta` on
    /// this group's surrogate, summing every rollout's update into the
    /// contexts they share.
    pub delta_h_pred: f64,
    /// Same per-token changes averaged as if every token had a private context.
    pub delta_h_isolated: f64,
    /// `(eta' sqrt(G-1) / G) * (E_{i != m}[B] - E[B^m])` (negated for the
    /// penalty pattern) when the advantages are a one-hot max-PPL pattern;
    /// `eta'` is the per-token step.
    pub delta_h_b_only: Option<f64>,
}

/// Per-token first-order entropy change for one token with advantage `adv`
/// and per-token logit step `step`.
fn token_entropy_delta(probs: &[f64], y: usize, adv: f64, step: f64) -> (f64, f64, f64, f64) {
    let h = entropy_of(probs);
    let p_o = probs[y];
    let p_o_log = if p_o > 0.0 { p_o * p_o.ln() } else { 0.0 };
    let sq_log: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p * p.ln()).sum();
    let sq: f64 = probs.iter().map(|&p| p * p).sum();
    let b = p_o_log + p_o * h;
    let f = -sq_log - sq * h;
    (h, b, f, -step * adv * (b + f))
}

/// First-order entropy change predicted for one ascent step at `s = 1`.
pub fn predict_entropy_change(
    policy: &PolicyTable,
    query: usize,
    rollouts: &[Rollout],
    advantages: &AdvantageVector,
    eta: f64,
) -> Result<EntropyReport> {
    policy.check_query(query)?;
    if advantages.len() != rollouts.len() || rollouts.is_empty() {
        return Err(DipoError::invalid("advantages must match a non-empty group"));
    }
    let l = policy.seq_len;
    let total_tokens: usize = rollouts.iter().map(Rollout::len).sum();
    let step = eta / total_tokens as f64;
    let probs: Vec<Vec<f64>> = (0..l).map(|t| policy.probs(query, t)).collect();

    let g = rollouts.len();
    let mut per_token_h = Vec::with_capacity(g);
    let mut b_terms = Vec::with_capacity(g);
    let mut f_terms = Vec::with_capacity(g);
    let mut context_delta = vec![0.0; l];
    let mut isolated = 0.0;
    for (o, &adv) in rollouts.iter().zip(advantages.values()) {
        let (mut hs, mut bs, mut fs) = (Vec::new(), Vec::new(), Vec::new());
        let mut sum = 0.0;
        for (t, &tok) in o.tokens.iter().enumerate() {
            let (h, b, f, d) = token_entropy_delta(&probs[t], tok as usize, adv, step);
            hs.push(h);
            bs.push(b);
            fs.push(f);
            context_delta[t] += d;
            sum += d;
        }
        isolated += sum / o.len() as f64;
        per_token_h.push(hs);
        b_terms.push(bs);
        f_terms.push(fs);
    }
    isolated /= g as f64;

    let delta_h_pred = rollouts
        .iter()
        .map(|o| context_delta[..o.len()].iter().sum::<f64>() / o.len() as f64)
        .sum::<f64>()
        / g as f64;
    let h_avg = per_token_h
        .iter()
        .map(|hs| hs.iter().sum::<f64>() / hs.len() as f64)
        .sum::<f64>()
        / g as f64;

    let delta_h_b_only = one_hot_pattern(advantages).map(|(m, reward)| {
        let mean_b = |bs: &Vec<f64>| bs.iter().sum::<f64>() / bs.len() as f64;
        let b_m = mean_b(&b_terms[m]);
        let b_rest = b_terms
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != m)
            .map(|(_, bs)| mean_b(bs))
            .sum::<f64>()
            / (g - 1) as f64;
        let k = step * ((g - 1) as f64).sqrt() / g as f64;
        if reward {
            k * (b_rest - b_m)
        } else {
            k * (b_m - b_rest)
        }
    });

    Ok(EntropyReport {
        per_token_h,
        h_avg,
        b_terms,
        f_terms,
        delta_h_pred,
        delta_h_isolated: isolated,
        delta_h_b_only,
    })
}

/// `(m, true)` for `[-1/k, .., k, .., -1/k]`, `(m, false)` for the negation,
/// with `k = sqrt(G-1)`.
fn one_hot_pattern(adv: &AdvantageVector) -> Option<(usize, bool)> {
    let g = adv.len();
    if g < 2 {
        return None;
    }
    let k = ((g - 1) as f64).sqrt();
    let m = adv
        .values()
        .iter()
        .position(|&a| (a.abs() - k).abs() < 1e-9 && (g == 2 || (a.abs() - 1.0 / k).abs() > 1e-9))?;
    let reward = adv.values()[m] > 0.0;
    let sign = if reward { 1.0 } else { -1.0 };
    let matches = adv
        .values()
        .iter()
        .enumerate()
        .all(|(i, &a)| if i == m { (a - sign * k).abs() < 1e-9 } else { (a + sign / k).abs() < 1e-9 });
    matches.then_some((m, reward))
}
