//! Bidirectional reward reallocation.
//!
//! Extreme groups carry no verification signal. When a threshold is
//! available, a hard group sitting in the low-PPL region has its
//! highest-PPL rollout rewarded (push toward exploration), and an easy group
//! in the high-PPL region has its highest-PPL rollout penalised (push toward
//! exploitation). Normal groups are zeroed, so the reallocated rewards never
//! overlap with the groups that already learn from verification rewards.

use serde::{Deserialize, Serialize};

use crate::error::{DipoError, Result};
use crate::reward::{classify_group, group_advantages, AdvantageVector, GroupClass, RewardVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    EncourageExploration,
    EncourageExploitation,
    Unchanged,
    ZeroedNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReallocationOutcome {
    pub rewards_r: RewardVector,
    pub changed_index: Option<usize>,
    pub direction: Direction,
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn reallocate(
    rewards: &RewardVector,
    ppls: &[f64],
    tau_star: Option<f64>,
) -> Result<ReallocationOutcome> {
    if ppls.len() != rewards.len() {
        return Err(DipoError::invalid(format!(
            "{} PPL values for a group of {}",
            ppls.len(),
            rewards.len()
        )));
    }
    if ppls.iter().any(|p| !p.is_finite()) {
        return Err(DipoError::invalid("non-finite PPL"));
    }

    let class = classify_group(rewards);
    if class == GroupClass::Normal {
        return Ok(ReallocationOutcome {
            rewards_r: RewardVector::zeros(rewards.len()),
            changed_index: None,
            direction: Direction::ZeroedNormal,
        });
    }

    let unchanged = ReallocationOutcome {
        rewards_r: rewards.clone(),
        changed_index: None,
        direction: Direction::Unchanged,
    };
    let Some(tau) = tau_star else {
        return Ok(unchanged);
    };

    let mean = ppls.iter().sum::<f64>() / ppls.len() as f64;
    let m = argmax(ppls);
    let outcome = match class {
        GroupClass::Hard if mean < tau => ReallocationOutcome {
            rewards_r: rewards.with_entry(m, 1),
            changed_index: Some(m),
            direction: Direction::EncourageExploration,
        },
        GroupClass::Easy if mean > tau => ReallocationOutcome {
            rewards_r: rewards.with_entry(m, 0),
            changed_index: Some(m),
            direction: Direction::EncourageExploitation,
        },
        _ => unchanged,
    };
    Ok(outcome)
}

/// Group-relative advantages of the reallocated rewards.
pub fn reallocation_advantages(outcome: &ReallocationOutcome) -> AdvantageVector {
    match outcome.direction {
        Direction::Unchanged | Direction::ZeroedNormal => {
            AdvantageVector::zeros(outcome.rewards_r.len())
        }
        Direction::EncourageExploration | Direction::EncourageExploitation => {
            group_advantages(&outcome.rewards_r)
        }
    }
}

/// Advantages with a single rollout singled out: `+sqrt(G-1)` for it and
/// `-1/sqrt(G-1)` for the rest when `reward` is true, negated otherwise.
pub fn one_hot_advantages(group_size: usize, index: usize, reward: bool) -> AdvantageVector {
    let k = ((group_size - 1) as f64).sqrt();
    let sign = if reward { 1.0 } else { -1.0 };
    AdvantageVector(
        (0..group_size)
            .map(|i| if i == index { sign * k } else { -sign / k })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(v: &[u8]) -> RewardVector {
        RewardVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hard_group_in_low_ppl_region() {
        let out = reallocate(&rv(&[0, 0, 0, 0]), &[2.0, 5.0, 3.0, 1.0], Some(6.0)).unwrap();
        assert_eq!(out.rewards_r, rv(&[0, 1, 0, 0]));
        assert_eq!(out.changed_index, Some(1));
        assert_eq!(out.direction, Direction::EncourageExploration);
    }

    #[test]
    fn easy_group_in_high_ppl_region() {
        let out = reallocate(&rv(&[1, 1, 1, 1]), &[8.0, 9.0, 7.0, 10.0], Some(6.0)).unwrap();
        assert_eq!(out.rewards_r, rv(&[1, 1, 1, 0]));
        assert_eq!(out.changed_index, Some(3));
        assert_eq!(out.direction, Direction::EncourageExploitation);
    }

    #[test]
    fn hard_group_in_high_ppl_region_is_unchanged() {
        let out = reallocate(&rv(&[0, 0, 0, 0]), &[7.0, 8.0, 9.0, 10.0], Some(6.0)).unwrap();
        assert_eq!(out.direction, Direction::Unchanged);
        assert_eq!(out.rewards_r, rv(&[0, 0, 0, 0]));
        assert_eq!(out.changed_index, None);
    }

    #[test]
    fn normal_group_is_zeroed() {
        for tau in [None, Some(0.5), Some(100.0)] {
            let out = reallocate(&rv(&[1, 0, 1, 0]), &[1.0, 2.0, 3.0, 4.0], tau).unwrap();
            assert_eq!(out.rewards_r, rv(&[0, 0, 0, 0]));
            assert_eq!(out.direction, Direction::ZeroedNormal);
        }
    }

    #[test]
    fn no_threshold_means_unchanged() {
        let out = reallocate(&rv(&[0, 0, 0, 0]), &[1.0, 1.0, 1.0, 1.0], None).unwrap();
        assert_eq!(out.direction, Direction::Unchanged);
        let out = reallocate(&rv(&[1, 1]), &[9.0, 9.0], None).unwrap();
        assert_eq!(out.direction, Direction::Unchanged);
    }

    #[test]
    fn mean_equal_to_threshold_is_unchanged() {
        let out = reallocate(&rv(&[0, 0]), &[5.0, 7.0], Some(6.0)).unwrap();
        assert_eq!(out.direction, Direction::Unchanged);
        let out = reallocate(&rv(&[1, 1]), &[5.0, 7.0], Some(6.0)).unwrap();
        assert_eq!(out.direction, Direction::Unchanged);
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let out = reallocate(&rv(&[0, 0, 0]), &[1.0, 3.0, 3.0], Some(10.0)).unwrap();
        assert_eq!(out.changed_index, Some(1));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(reallocate(&rv(&[0, 0]), &[1.0], Some(2.0)).is_err());
        assert!(reallocate(&rv(&[0, 0]), &[1.0, f64::NAN], Some(2.0)).is_err());
    }

    #[test]
    fn advantages_of_outcomes() {
        let s3 = 3f64.sqrt();
        let explore = reallocate(&rv(&[0, 0, 0, 0]), &[2.0, 5.0, 3.0, 1.0], Some(6.0)).unwrap();
        let a = reallocation_advantages(&explore);
        let expected = [-1.0 / s3, s3, -1.0 / s3, -1.0 / s3];
        for (x, e) in a.values().iter().zip(expected) {
            assert!((x - e).abs() < 1e-12);
        }
        for (x, e) in a.values().iter().zip(one_hot_advantages(4, 1, true).values()) {
            assert!((x - e).abs() < 1e-12);
        }

        let exploit = reallocate(&rv(&[1, 1, 1, 1]), &[8.0, 9.0, 7.0, 10.0], Some(6.0)).unwrap();
        let a = reallocation_advantages(&exploit);
        let expected = [1.0 / s3, 1.0 / s3, 1.0 / s3, -s3];
        for (x, e) in a.values().iter().zip(expected) {
            assert!((x - e).abs() < 1e-12);
        }

        let zeroed = reallocate(&rv(&[1, 0, 1, 0]), &[1.0; 4], Some(6.0)).unwrap();
        assert_eq!(reallocation_advantages(&zeroed).values(), &[0.0; 4]);
    }

    fn variance(r: &RewardVector) -> f64 {
        let g = r.len() as f64;
        let m = r.correct() as f64 / g;
        r.values().iter().map(|&x| (f64::from(x) - m).powi(2)).sum::<f64>() / g
    }

    proptest! {
        #[test]
        fn reallocation_is_minimal(
            g in 2usize..12,
            all_correct in any::<bool>(),
            ppls in prop::collection::vec(1.0f64..20.0, 12),
            tau in prop::option::of(1.0f64..20.0),
        ) {
            let rewards = rv(&vec![u8::from(all_correct); g]);
            let out = reallocate(&rewards, &ppls[..g], tau).unwrap();
            let changed: Vec<usize> = (0..g)
                .filter(|&i| out.rewards_r.values()[i] != rewards.values()[i])
                .collect();
            prop_assert!(changed.len() <= 1);
            prop_assert_eq!(changed.first().copied(), out.changed_index);
            match out.direction {
                Direction::EncourageExploration => prop_assert!(!all_correct),
                Direction::EncourageExploitation => prop_assert!(all_correct),
                _ => prop_assert!(changed.is_empty()),
            }
            if !changed.is_empty() {
                let gf = g as f64;
                prop_assert!((variance(&out.rewards_r) - (1.0 / gf) * (1.0 - 1.0 / gf)).abs() < 1e-12);
            }
        }

        #[test]
        fn reallocation_is_permutation_equivariant(
            g in 2usize..10,
            all_correct in any::<bool>(),
            ppls in prop::collection::vec(1.0f64..20.0, 10),
            tau in 1.0f64..20.0,
            rot in 0usize..10,
        ) {
            let ppls = &ppls[..g];
            let rewards = rv(&vec![u8::from(all_correct); g]);
            let out = reallocate(&rewards, ppls, Some(tau)).unwrap();
            let rot = rot % g;
            let mut rotated = ppls.to_vec();
            rotated.rotate_left(rot);
            let out_rot = reallocate(&rewards, &rotated, Some(tau)).unwrap();
            let mut expected = out.rewards_r.values().to_vec();
            expected.rotate_left(rot);
            prop_assert_eq!(out_rot.rewards_r.values(), &expected[..]);
        }

        #[test]
        fn zeroed_and_unchanged_are_idempotent(
            bits in prop::collection::vec(0u8..2, 2..10),
            tau in prop::option::of(1.0f64..20.0),
        ) {
            let g = bits.len();
            let rewards = rv(&bits);
            let ppls: Vec<f64> = (0..g).map(|i| 1.0 + i as f64).collect();
            let out = reallocate(&rewards, &ppls, tau).unwrap();
            if matches!(out.direction, Direction::Unchanged) {
                let again = reallocate(&out.rewards_r, &ppls, tau).unwrap();
                prop_assert_eq!(&again.rewards_r, &out.rewards_r);
            }
            if matches!(out.direction, Direction::ZeroedNormal) {
                prop_assert!(reallocation_advantages(&out).is_zero());
            }
        }
    }
}
