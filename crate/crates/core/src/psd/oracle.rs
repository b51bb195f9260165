//! Exhaustive reference implementation of threshold selection.
//!
//! Re-evaluates every candidate from the raw records with no sorting sweep, no
//! prefix counts and no helpers from the parent module other than the report
//! types. Used to cross-check [`super::select_threshold`].

use rand::Rng;

use super::{Candidate, ThresholdReason, ThresholdReport};

const Z: f64 = 1.96;

struct Region {
    n: usize,
    ones: usize,
    zeros: usize,
}

fn region(snapshot: &[(f64, u8)], keep: impl Fn(f64) -> bool) -> Region {
    let mut reg = Region {
        n: 0,
        ones: 0,
        zeros: 0,
    };
    for &(p, r) in snapshot {
        if keep(p) {
            reg.n += 1;
            if r == 1 {
                reg.ones += 1;
            } else {
                reg.zeros += 1;
            }
        }
    }
    reg
}

fn bounds(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    (p - Z * se, p + Z * se)
}

pub fn brute_force_threshold(snapshot: &[(f64, u8)], min_region: usize) -> ThresholdReport {
    if snapshot.is_empty() || snapshot.len() < 2 * min_region {
        return ThresholdReport {
            tau_star: None,
            candidates: vec![],
            reason: ThresholdReason::InsufficientData,
        };
    }
    let need = if min_region == 0 { 1 } else { min_region };

    let mut values: Vec<f64> = Vec::new();
    for &(p, _) in snapshot {
        if !values.contains(&p) {
            values.push(p);
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut candidates = Vec::new();
    for k in 1..values.len() {
        let tau = (values[k - 1] + values[k]) / 2.0;
        let lo = region(snapshot, |p| p < tau);
        let hi = region(snapshot, |p| !(p < tau));

        let (delta_eis, delta_ers) = if lo.n >= need && hi.n >= need {
            let (l1, _) = bounds(lo.ones, lo.n);
            let (_, u2) = bounds(lo.zeros, lo.n);
            let (_, u3) = bounds(hi.ones, hi.n);
            let (l4, _) = bounds(hi.zeros, hi.n);
            (Some(l1 - u2), Some(l4 - u3))
        } else {
            (None, None)
        };

        let mut miss = 0usize;
        for &(p, r) in snapshot {
            let predicted = usize::from(p < tau);
            miss += (usize::from(r)).abs_diff(predicted);
        }
        candidates.push(Candidate {
            tau,
            delta_eis,
            delta_ers,
            err: miss as f64 / snapshot.len() as f64,
            below: lo.n,
            above: hi.n,
        });
    }

    let mut tau_star = None;
    let mut best_err = f64::INFINITY;
    for c in &candidates {
        let ok = matches!((c.delta_eis, c.delta_ers), (Some(a), Some(b)) if a > 0.0 && b > 0.0);
        if ok && (c.err < best_err || (c.err == best_err && tau_star.is_some_and(|t| c.tau < t))) {
            best_err = c.err;
            tau_star = Some(c.tau);
        }
    }

    ThresholdReport {
        tau_star,
        reason: match tau_star {
            Some(_) => ThresholdReason::Selected,
            None => ThresholdReason::NoValidCandidate,
        },
        candidates,
    }
}

/// Field-by-field comparison of two reports. `tol` applies to tau, gaps and
/// errors; counts and reasons must match exactly.
pub fn reports_match(a: &ThresholdReport, b: &ThresholdReport, tol: f64) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= tol;
    let close_opt = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) => close(x, y),
        (None, None) => true,
        _ => false,
    };
    a.reason == b.reason
        && close_opt(a.tau_star, b.tau_star)
        && a.candidates.len() == b.candidates.len()
        && a.candidates.iter().zip(&b.candidates).all(|(x, y)| {
            close(x.tau, y.tau)
                && close_opt(x.delta_eis, y.delta_eis)
                && close_opt(x.delta_ers, y.delta_ers)
                && close(x.err, y.err)
                && x.below == y.below
                && x.above == y.above
        })
}

/// Random `(ppl, reward)` window of up to `max_len` records: two overlapping
/// PPL clusters with a random shift, quantised half the time so ties occur.
pub fn random_snapshot<R: Rng + ?Sized>(rng: &mut R, max_len: usize) -> Vec<(f64, u8)> {
    let m = rng.random_range(0..=max_len);
    let levels = rng.random_range(2..64u32) as f64;
    let quantise = rng.random_bool(0.5);
    let shift = rng.random_range(0.0..3.0);
    (0..m)
        .map(|_| {
            let correct = rng.random_bool(0.5);
            let centre = if correct { 0.5 } else { 0.5 + shift };
            let mut ppl = 1.0 + (centre + rng.random_range(-1.0..1.0f64)).abs();
            if quantise {
                ppl = 1.0 + ((ppl - 1.0) * levels).round() / levels;
            }
            (ppl, u8::from(correct))
        })
        .collect()
}
