//! Run configuration.
//!
//! Stored as TOML. Every field has a default, so a config file only needs the
//! keys it changes. The resolved config written next to a run is enough to
//! reproduce it exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DipoError, Result};
use crate::policy::{Algorithm, ClipRange, StepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub steps: usize,
    /// Number of distinct tasks (queries).
    pub num_tasks: usize,
    /// Groups sampled per step; equal to `num_tasks` means every task every step.
    pub batch_groups: usize,
    pub group_size: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    /// Initial logit bias toward the answer token at difficulty 0.
    pub difficulty_bias: f64,
    /// Fraction of tasks whose initial policy confidently prefers a near-miss
    /// decoy answer.
    pub trap_fraction: f64,
    /// Positions at which a decoy differs from the true answer.
    pub trap_positions: usize,
    /// Initial logit bias toward the decoy of a trap task.
    pub trap_bias: f64,
    /// Ascent step. Gradients are means over groups of token-normalised
    /// surrogates, so useful values are large.
    pub eta: f64,
    pub alpha: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub ppo_reuse: usize,
    pub temperature: f64,
    pub eval_temperature: f64,
    pub eval_k: usize,
    /// Evaluate every this many steps (0 disables periodic evaluation).
    pub eval_every: usize,
    pub n_min: usize,
    pub seed: u64,
    /// Keep every rollout's PPL in the run log (needed for histograms).
    pub log_ppls: bool,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Dipo,
            steps: 300,
            num_tasks: 64,
            batch_groups: 64,
            group_size: 8,
            vocab_size: 16,
            seq_len: 8,
            difficulty_bias: 6.0,
            trap_fraction: 0.0,
            trap_positions: 1,
            trap_bias: 9.0,
            eta: 100.0,
            alpha: 0.1,
            eps_low: 0.2,
            eps_high: 0.28,
            ppo_reuse: 1,
            temperature: 1.2,
            eval_temperature: 0.6,
            eval_k: 8,
            eval_every: 10,
            n_min: crate::psd::DEFAULT_MIN_REGION,
            seed: 0,
            log_ppls: true,
            output_dir: "runs".into(),
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DipoError::config(field, format!("must be a positive finite number, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let at_least = |field: &'static str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(DipoError::config(field, format!("must be >= {min}, got {v}")))
            }
        };
        at_least("steps", self.steps, 1)?;
        at_least("num_tasks", self.num_tasks, 1)?;
        at_least("batch_groups", self.batch_groups, 1)?;
        if self.batch_groups > self.num_tasks {
            return Err(DipoError::config(
                "batch_groups",
                format!("cannot exceed num_tasks ({})", self.num_tasks),
            ));
        }
        at_least("group_size", self.group_size, 2)?;
        at_least("vocab_size", self.vocab_size, 2)?;
        at_least("seq_len", self.seq_len, 1)?;
        at_least("ppo_reuse", self.ppo_reuse, 1)?;
        at_least("eval_k", self.eval_k, 1)?;
        if !(self.difficulty_bias >= 0.0 && self.difficulty_bias.is_finite()) {
            return Err(DipoError::config("difficulty_bias", "must be finite and >= 0"));
        }
        if !(self.trap_bias >= 0.0 && self.trap_bias.is_finite()) {
            return Err(DipoError::config("trap_bias", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.trap_fraction) {
            return Err(DipoError::config("trap_fraction", format!("must be in [0, 1], got {}", self.trap_fraction)));
        }
        if self.trap_positions == 0 || self.trap_positions > self.seq_len {
            return Err(DipoError::config(
                "trap_positions",
                format!("must be in [1, seq_len], got {}", self.trap_positions),
            ));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(DipoError::config("eta", format!("must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DipoError::config("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.eps_low) {
            return Err(DipoError::config("eps_low", format!("must be in [0, 1), got {}", self.eps_low)));
        }
        if !(self.eps_high >= 0.0 && self.eps_high.is_finite()) {
            return Err(DipoError::config("eps_high", format!("must be finite and >= 0, got {}", self.eps_high)));
        }
        positive("temperature", self.temperature)?;
        positive("eval_temperature", self.eval_temperature)?;
        if self.output_dir.is_empty() {
            return Err(DipoError::config("output_dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            eta: self.eta,
            alpha: self.alpha,
            clip: ClipRange {
                eps_low: self.eps_low,
                eps_high: self.eps_high,
            },
            reuse: self.ppo_reuse,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(s).map_err(|e| DipoError::invalid(format!("config parse error: {e}")))?;
        let defaults = Self::default().as_table();
        for (key, value) in table.iter_mut() {
            if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (defaults.get(key), &*value) {
                *value = toml::Value::Float(*i as f64);
            }
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e| DipoError::invalid(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn as_table(&self) -> toml::Table {
        toml::from_str(&self.to_toml_string()).expect("own output parses")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DipoError::invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Sets one field from its textual value (`key=value` overrides).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        // round-trip through TOML so every field parses with its own type
        let mut table = self.as_table();
        if !table.contains_key(key) {
            return Err(DipoError::invalid(format!("unknown config key `{key}`")));
        }
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let parsed = match (&table[key], parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (toml::Value::String(_), v) if !v.is_str() => toml::Value::String(value.to_string()),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
        let updated: RunConfig = table
            .try_into()
            .map_err(|e| DipoError::invalid(format!("bad value for `{key}`: {e}")))?;
        *self = updated;
        Ok(())
    }
}
