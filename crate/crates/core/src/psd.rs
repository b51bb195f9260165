//! Perplexity space disentangling.
//!
//! Given a window of `(ppl, reward)` pairs, find the threshold `tau` that
//! splits PPL space into a low-PPL region (expected to be mostly correct) and a
//! high-PPL region (expected to be mostly wrong). A candidate is admissible only
//! when both separations are positive at the 95% Wald bounds; among admissible
//! candidates the one with the lowest classification error wins.
//!
//! Candidates are the midpoints between consecutive distinct PPL values, which
//! enumerates every distinct split. A record whose PPL equals `tau` exactly is
//! counted in the high-PPL region.

use serde::{Deserialize, Serialize};

use crate::error::{DipoError, Result};

pub mod oracle;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Default minimum number of records on each side of a candidate.
pub const DEFAULT_MIN_REGION: usize = 20;

/// Symmetric Wald interval before clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldInterval {
    pub lower: f64,
    pub upper: f64,
}

impl WaldInterval {
    pub fn clipped(self) -> (f64, f64) {
        (self.lower.clamp(0.0, 1.0), self.upper.clamp(0.0, 1.0))
    }
}

pub fn wald_interval(p_hat: f64, n: usize) -> Result<WaldInterval> {
    if n == 0 {
        return Err(DipoError::InsufficientData(
            "Wald interval needs n >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(DipoError::invalid(format!("p_hat {p_hat} outside [0, 1]")));
    }
    let se = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    Ok(WaldInterval {
        lower: p_hat - Z_95 * se,
        upper: p_hat + Z_95 * se,
    })
}

/// 95% Wald interval clipped to `[0, 1]`.
pub fn wald_ci(p_hat: f64, n: usize) -> Result<(f64, f64)> {
    wald_interval(p_hat, n).map(WaldInterval::clipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEstimate {
    pub p_hat: f64,
    pub n: usize,
    /// Clipped bounds.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimate {
    Defined(ConditionalEstimate),
    /// The conditioning region is empty.
    Undefined,
}

impl Estimate {
    fn from_counts(hits: usize, n: usize) -> Self {
        if n == 0 {
            return Estimate::Undefined;
        }
        let p_hat = hits as f64 / n as f64;
        let (lower, upper) = wald_ci(p_hat, n).expect("n > 0 and p_hat in range");
        Estimate::Defined(ConditionalEstimate {
            p_hat,
            n,
            lower,
            upper,
        })
    }

    pub fn p_hat(&self) -> Option<f64> {
        match self {
            Estimate::Defined(e) => Some(e.p_hat),
            Estimate::Undefined => None,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Estimate::Defined(e) => e.n,
            Estimate::Undefined => 0,
        }
    }
}

/// The four conditional reward probabilities on either side of `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalProbs {
    pub correct_below: Estimate,
    pub wrong_below: Estimate,
    pub correct_above: Estimate,
    pub wrong_above: Estimate,
}

/// Region counts for one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SplitCounts {
    below: usize,
    correct_below: usize,
    above: usize,
    correct_above: usize,
}

impl SplitCounts {
    fn at(snapshot: &[(f64, u8)], tau: f64) -> Self {
        let mut c = SplitCounts {
            below: 0,
            correct_below: 0,
            above: 0,
            correct_above: 0,
        };
        for &(ppl, r) in snapshot {
            if ppl < tau {
                c.below += 1;
                c.correct_below += usize::from(r);
            } else {
                c.above += 1;
                c.correct_above += usize::from(r);
            }
        }
        c
    }

    fn gaps(&self, min_region: usize) -> Option<(f64, f64)> {
        let min_region = min_region.max(1);
        if self.below < min_region || self.above < min_region {
            return None;
        }
        let eis = gap_from_counts(self.correct_below, self.below);
        let ers = gap_from_counts(self.above - self.correct_above, self.above);
        Some((eis, ers))
    }

    fn error(&self) -> f64 {
        let wrong_below = self.below - self.correct_below;
        (wrong_below + self.correct_above) as f64 / (self.below + self.above) as f64
    }
}

/// Lower Wald bound of `p_hat` minus the upper Wald bound of `1 - p_hat`,
/// both raw (unclipped).
pub fn wald_gap(p_hat: f64, n: usize) -> Result<f64> {
    let favoured = wald_interval(p_hat, n)?;
    let other = wald_interval(1.0 - p_hat, n)?;
    Ok(favoured.lower - other.upper)
}

fn gap_from_counts(favoured: usize, n: usize) -> f64 {
    wald_gap(favoured as f64 / n as f64, n).expect("n >= 1 and counts within n")
}

pub fn conditional_probs(snapshot: &[(f64, u8)], tau: f64) -> Result<ConditionalProbs> {
    if snapshot.is_empty() {
        return Err(DipoError::InsufficientData("empty PPL snapshot".into()));
    }
    let c = SplitCounts::at(snapshot, tau);
    Ok(ConditionalProbs {
        correct_below: Estimate::from_counts(c.correct_below, c.below),
        wrong_below: Estimate::from_counts(c.below - c.correct_below, c.below),
        correct_above: Estimate::from_counts(c.correct_above, c.above),
        wrong_above: Estimate::from_counts(c.above - c.correct_above, c.above),
    })
}

/// `(delta_eis, delta_ers)` at `tau`, or `None` when either region holds fewer
/// than `min_region` records (the candidate cannot be judged).
pub fn advantage_gaps(snapshot: &[(f64, u8)], tau: f64, min_region: usize) -> Option<(f64, f64)> {
    SplitCounts::at(snapshot, tau).gaps(min_region)
}

/// Fraction of records misclassified by the rule "PPL below tau means correct".
pub fn classification_error(snapshot: &[(f64, u8)], tau: f64) -> f64 {
    if snapshot.is_empty() {
        return 0.0;
    }
    SplitCounts::at(snapshot, tau).error()
}

fn sorted_distinct(snapshot: &[(f64, u8)]) -> Vec<f64> {
    let mut ppls: Vec<f64> = snapshot.iter().map(|&(p, _)| p).collect();
    ppls.sort_by(f64::total_cmp);
    ppls.dedup();
    ppls
}

/// Midpoints between consecutive distinct PPL values, ascending.
pub fn candidate_grid(snapshot: &[(f64, u8)]) -> Vec<f64> {
    sorted_distinct(snapshot)
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdReason {
    Selected,
    NoValidCandidate,
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tau: f64,
    /// `None` when a region is below the minimum count.
    pub delta_eis: Option<f64>,
    pub delta_ers: Option<f64>,
    pub err: f64,
    pub below: usize,
    pub above: usize,
}

impl Candidate {
    pub fn admissible(&self) -> bool {
        matches!((self.delta_eis, self.delta_ers), (Some(a), Some(b)) if a > 0.0 && b > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub tau_star: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub reason: ThresholdReason,
}

impl ThresholdReport {
    pub fn insufficient() -> Self {
        Self {
            tau_star: None,
            candidates: Vec::new(),
            reason: ThresholdReason::InsufficientData,
        }
    }

    pub fn selected(&self) -> Option<&Candidate> {
        let tau = self.tau_star?;
        self.candidates.iter().find(|c| c.tau == tau)
    }
}

/// Threshold selection by a single sorted sweep over the candidate grid.
pub fn select_threshold(snapshot: &[(f64, u8)], min_region: usize) -> ThresholdReport {
    if snapshot.is_empty() || snapshot.len() < 2 * min_region {
        return ThresholdReport::insufficient();
    }

    let mut sorted: Vec<(f64, u8)> = snapshot.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = sorted.len();
    let total_correct: usize = sorted.iter().map(|&(_, r)| usize::from(r)).sum();

    let mut candidates = Vec::new();
    let mut below = 0;
    let mut correct_below = 0;
    let mut i = 0;
    while i < total {
        // absorb the whole run of equal PPL values
        let value = sorted[i].0;
        while i < total && sorted[i].0 == value {
            below += 1;
            correct_below += usize::from(sorted[i].1);
            i += 1;
        }
        if i == total {
            break;
        }
        let counts = SplitCounts {
            below,
            correct_below,
            above: total - below,
            correct_above: total_correct - correct_below,
        };
        let gaps = counts.gaps(min_region);
        candidates.push(Candidate {
            tau: 0.5 * (value + sorted[i].0),
            delta_eis: gaps.map(|g| g.0),
            delta_ers: gaps.map(|g| g.1),
            err: counts.error(),
            below: counts.below,
            above: counts.above,
        });
    }

    let mut best: Option<&Candidate> = None;
    for c in candidates.iter().filter(|c| c.admissible()) {
        // ascending tau, strict improvement keeps the smallest tau on ties
        if best.is_none_or(|b| c.err < b.err) {
            best = Some(c);
        }
    }
    let tau_star = best.map(|c| c.tau);
    ThresholdReport {
        tau_star,
        reason: if tau_star.is_some() {
            ThresholdReason::Selected
        } else {
            ThresholdReason::NoValidCandidate
        },
        candidates,
    }
}
