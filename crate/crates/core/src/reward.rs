//! Binary verification rewards and group-relative advantages.
//!
//! A group is the `G` rollouts sampled for one query. Rewards are exact-match
//! checks against the reference answer, and advantages are the rewards
//! standardized within the group (population standard deviation). Groups whose
//! rewards are all equal carry no learning signal and are split off by
//! [`dynamic_partition`].

use serde::{Deserialize, Serialize};

use crate::error::{DipoError, Result};

/// Exact sequence match. Returns 1 iff `output` equals `answer` element-wise.
pub fn verify(output: &[u32], answer: &[u32]) -> Result<u8> {
    if output.is_empty() || answer.is_empty() {
        return Err(DipoError::invalid("verify requires non-empty sequences"));
    }
    Ok(u8::from(output == answer))
}

/// Binary rewards of one group, length `G >= 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct RewardVector(Vec<u8>);

impl RewardVector {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if values.len() < 2 {
            return Err(DipoError::invalid(format!(
                "group size must be at least 2, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|&&r| r > 1) {
            return Err(DipoError::invalid(format!("reward {bad} is not binary")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn correct(&self) -> usize {
        self.0.iter().filter(|&&r| r == 1).count()
    }

    /// Copy with position `index` set to `value`. Crate-internal so the
    /// binary invariant cannot be bypassed.
    pub(crate) fn with_entry(&self, index: usize, value: u8) -> Self {
        debug_assert!(value <= 1);
        let mut values = self.0.clone();
        values[index] = value;
        Self(values)
    }

    pub(crate) fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }
}

impl TryFrom<Vec<u8>> for RewardVector {
    type Error = DipoError;

    fn try_from(values: Vec<u8>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<RewardVector> for Vec<u8> {
    fn from(rewards: RewardVector) -> Self {
        rewards.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupClass {
    /// Every rollout failed.
    Hard,
    /// Every rollout succeeded.
    Easy,
    Normal,
}

/// Per-rollout advantages of one group. Constant over the tokens of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector(pub Vec<f64>);

impl AdvantageVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0.0)
    }
}

/// `(r_i - mean) / std` with the population standard deviation over the group.
/// Zero-variance groups get exactly zero advantages.
pub fn group_advantages(rewards: &RewardVector) -> AdvantageVector {
    let g = rewards.len() as f64;
    let correct = rewards.correct();
    if correct == 0 || correct == rewards.len() {
        return AdvantageVector::zeros(rewards.len());
    }
    let mean = correct as f64 / g;
    let var = rewards
        .values()
        .iter()
        .map(|&r| (f64::from(r) - mean).powi(2))
        .sum::<f64>()
        / g;
    let std = var.sqrt();
    AdvantageVector(
        rewards
            .values()
            .iter()
            .map(|&r| (f64::from(r) - mean) / std)
            .collect(),
    )
}

pub fn classify_group(rewards: &RewardVector) -> GroupClass {
    match rewards.correct() {
        0 => GroupClass::Hard,
        n if n == rewards.len() => GroupClass::Easy,
        _ => GroupClass::Normal,
    }
}

/// Anything that carries a group's verification rewards.
pub trait Rewarded {
    fn rewards(&self) -> &RewardVector;
}

impl Rewarded for RewardVector {
    fn rewards(&self) -> &RewardVector {
        self
    }
}

/// Split groups into those with mixed rewards (`0 < #correct < G`) and the
/// extreme ones. Order within each side is preserved.
pub fn dynamic_partition<T: Rewarded>(groups: Vec<T>) -> (Vec<T>, Vec<T>) {
    groups
        .into_iter()
        .partition(|g| classify_group(g.rewards()) == GroupClass::Normal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(v: &[u8]) -> RewardVector {
        RewardVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn verify_examples() {
        assert_eq!(verify(&[3, 1, 4], &[3, 1, 4]).unwrap(), 1);
        assert_eq!(verify(&[3, 1, 4], &[3, 1, 5]).unwrap(), 0);
        assert_eq!(verify(&[3, 1], &[3, 1, 4]).unwrap(), 0);
        assert!(verify(&[], &[1]).is_err());
        assert!(verify(&[1], &[]).is_err());
    }

    #[test]
    fn reward_vector_rejects_bad_input() {
        assert!(RewardVector::new(vec![1]).is_err());
        assert!(RewardVector::new(vec![0, 2]).is_err());
        assert!(serde_json::from_str::<RewardVector>("[0, 3]").is_err());
    }

    #[test]
    fn advantages_one_hot() {
        let a = group_advantages(&rv(&[1, 0, 0, 0]));
        let s3 = 3f64.sqrt();
        let expected = [s3, -1.0 / s3, -1.0 / s3, -1.0 / s3];
        for (x, e) in a.values().iter().zip(expected) {
            assert!((x - e).abs() < 1e-12, "{x} vs {e}");
        }
        assert!((a.values()[0] - 1.7320508).abs() < 1e-7);
        assert!((a.values()[1] + 0.5773503).abs() < 1e-7);
    }

    #[test]
    fn advantages_half() {
        let a = group_advantages(&rv(&[1, 1, 0, 0]));
        assert_eq!(a.values(), &[1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn advantages_extreme_groups_are_exactly_zero() {
        assert_eq!(group_advantages(&rv(&[0, 0, 0, 0])).values(), &[0.0; 4]);
        assert_eq!(group_advantages(&rv(&[1, 1, 1, 1])).values(), &[0.0; 4]);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_group(&rv(&[0, 0, 0, 0])), GroupClass::Hard);
        assert_eq!(classify_group(&rv(&[1, 1, 1, 1])), GroupClass::Easy);
        assert_eq!(classify_group(&rv(&[1, 0, 1, 0])), GroupClass::Normal);
    }

    #[test]
    fn partition_examples() {
        let groups = vec![rv(&[0, 0, 0, 0]), rv(&[1, 0, 1, 0]), rv(&[1, 1, 1, 1])];
        let (normal, extreme) = dynamic_partition(groups);
        assert_eq!(normal, vec![rv(&[1, 0, 1, 0])]);
        assert_eq!(extreme, vec![rv(&[0, 0, 0, 0]), rv(&[1, 1, 1, 1])]);

        let (normal, extreme) = dynamic_partition(vec![rv(&[1, 0]), rv(&[0, 1])]);
        assert_eq!(normal.len(), 2);
        assert!(extreme.is_empty());

        let (normal, extreme) = dynamic_partition(vec![rv(&[0, 0]), rv(&[0, 0])]);
        assert!(normal.is_empty());
        assert_eq!(extreme.len(), 2);
    }
}
