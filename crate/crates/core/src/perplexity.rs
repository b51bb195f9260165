//! Sequence perplexity and the rolling (PPL, reward) queue.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{DipoError, Result};

/// `exp(-mean(logprobs))`. Log-probabilities must be non-positive.
pub fn sequence_ppl(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(DipoError::invalid("perplexity of an empty sequence"));
    }
    if let Some(bad) = token_logprobs.iter().find(|&&lp| !(lp <= 0.0)) {
        return Err(DipoError::invalid(format!(
            "log-probability {bad} is not <= 0"
        )));
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok((-mean).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplRecord {
    pub ppl: f64,
    pub reward: u8,
    pub batch_id: u64,
}

/// Keeps the records of the two most recently pushed batches.
#[derive(Debug, Clone, Default)]
pub struct PplQueue {
    records: VecDeque<PplRecord>,
    latest: Option<u64>,
    previous: Option<u64>,
}

impl PplQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn latest_batch(&self) -> Option<u64> {
        self.latest
    }

    /// Appends one batch and evicts everything older than the previous batch.
    pub fn push_batch(&mut self, batch: &[(f64, u8)], batch_id: u64) -> Result<()> {
        if let Some(last) = self.latest {
            if batch_id <= last {
                return Err(DipoError::invalid(format!(
                    "batch id {batch_id} is not greater than {last}"
                )));
            }
        }
        for &(ppl, reward) in batch {
            if !(ppl.is_finite() && ppl >= 1.0) || reward > 1 {
                return Err(DipoError::invalid(format!(
                    "bad queue entry (ppl={ppl}, reward={reward})"
                )));
            }
        }

        self.previous = self.latest;
        self.latest = Some(batch_id);
        if let Some(keep_from) = self.previous {
            while self.records.front().is_some_and(|r| r.batch_id < keep_from) {
                self.records.pop_front();
            }
        } else {
            self.records.clear();
        }
        self.records
            .extend(batch.iter().map(|&(ppl, reward)| PplRecord {
                ppl,
                reward,
                batch_id,
            }));
        Ok(())
    }

    /// Insertion-ordered copy of the `(ppl, reward)` pairs.
    pub fn snapshot(&self) -> Vec<(f64, u8)> {
        self.records.iter().map(|r| (r.ppl, r.reward)).collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &PplRecord> {
        self.records.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppl_examples() {
        assert_eq!(sequence_ppl(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        let l16 = -(16f64.ln());
        for t in 1..6 {
            let lp = vec![l16; t];
            assert!((sequence_ppl(&lp).unwrap() - 16.0).abs() < 1e-12);
        }
        let p = sequence_ppl(&[-1.0, -2.0, -3.0]).unwrap();
        assert!((p - 2f64.exp()).abs() < 1e-12);
        assert!((p - 7.3890561).abs() < 1e-7);
    }

    #[test]
    fn ppl_errors() {
        assert!(sequence_ppl(&[]).is_err());
        assert!(sequence_ppl(&[-0.1, 0.2]).is_err());
        assert!(sequence_ppl(&[f64::NAN]).is_err());
    }

    fn batch(n: usize, base: f64) -> Vec<(f64, u8)> {
        (0..n).map(|i| (base + i as f64, (i % 2) as u8)).collect()
    }

    #[test]
    fn queue_keeps_two_batches() {
        let mut q = PplQueue::new();
        q.push_batch(&batch(8, 1.0), 1).unwrap();
        assert_eq!(q.len(), 8);
        q.push_batch(&batch(8, 10.0), 2).unwrap();
        q.push_batch(&batch(8, 20.0), 3).unwrap();
        assert_eq!(q.len(), 16);
        let ids: std::collections::BTreeSet<_> = q.records().map(|r| r.batch_id).collect();
        assert_eq!(ids.into_iter().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn queue_empty_batch_still_evicts() {
        let mut q = PplQueue::new();
        q.push_batch(&batch(4, 1.0), 1).unwrap();
        q.push_batch(&batch(4, 5.0), 2).unwrap();
        q.push_batch(&[], 3).unwrap();
        assert_eq!(q.len(), 4);
        assert!(q.records().all(|r| r.batch_id == 2));
        assert_eq!(q.latest_batch(), Some(3));
    }

    #[test]
    fn queue_rejects_non_monotone_ids() {
        let mut q = PplQueue::new();
        q.push_batch(&batch(2, 1.0), 5).unwrap();
        assert!(q.push_batch(&batch(2, 1.0), 5).is_err());
        assert!(q.push_batch(&batch(2, 1.0), 4).is_err());
        assert!(q.push_batch(&[(0.5, 1)], 6).is_err());
    }

    #[test]
    fn snapshot_is_independent() {
        let mut q = PplQueue::new();
        assert!(q.snapshot().is_empty());
        q.push_batch(&batch(8, 1.0), 1).unwrap();
        q.push_batch(&batch(8, 9.0), 2).unwrap();
        let snap = q.snapshot();
        assert_eq!(snap.len(), 16);
        assert_eq!(snap[0], (1.0, 0));
        assert_eq!(snap[15], (16.0, 1));
        q.push_batch(&batch(3, 50.0), 3).unwrap();
        assert_eq!(snap.len(), 16);
        assert_eq!(snap[0], (1.0, 0));
    }

    proptest! {
        #[test]
        fn ppl_permutation_invariant(mut lps in prop::collection::vec(-10.0f64..=0.0, 1..40), seed in any::<u64>()) {
            let a = sequence_ppl(&lps).unwrap();
            // deterministic shuffle
            let n = lps.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                lps.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = sequence_ppl(&lps).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
            prop_assert!(a >= 1.0);
        }

        #[test]
        fn ppl_of_repeated_value(x in -20.0f64..=0.0, k in 1usize..64) {
            let p = sequence_ppl(&vec![x; k]).unwrap();
            prop_assert!((p - (-x).exp()).abs() <= 1e-12 * p);
        }

        #[test]
        fn queue_never_holds_more_than_two_batches(sizes in prop::collection::vec(0usize..10, 1..20)) {
            let mut q = PplQueue::new();
            for (i, &n) in sizes.iter().enumerate() {
                q.push_batch(&batch(n, 1.0), i as u64 + 1).unwrap();
                let ids: std::collections::BTreeSet<_> = q.records().map(|r| r.batch_id).collect();
                prop_assert!(ids.len() <= 2);
                let expected = n + if i > 0 { sizes[i - 1] } else { 0 };
                prop_assert_eq!(q.len(), expected);
            }
        }
    }
}
