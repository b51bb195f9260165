//! Synthetic verifiable tasks and the training driver.
//!
//! A task is a fixed answer sequence of length `L` over a vocabulary of `V`
//! tokens; a rollout is correct iff it reproduces the answer exactly. The
//! initial policy leans toward the answer by `bias * (1 - difficulty)` logits at
//! every position, so easy tasks start mostly solved and the hardest ones start
//! uniform.
//!
//! Trap tasks model confident misconceptions: their initial policy puts a
//! separate, usually larger, bias on a decoy that differs from the answer at a few positions, so
//! their groups start Hard with low PPL.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brr::one_hot_advantages;
use crate::config::RunConfig;
use crate::error::{DipoError, Result};
use crate::perplexity::PplQueue;
use crate::policy::{
    accumulate_surrogate, mean_entropy, sample_group, train_step, ClassCounts, Group, LogitGrad, PolicyTable,
    ReallocationCounts, Rollout,
};
use crate::psd::{select_threshold, ThresholdReason};
use crate::reward::{verify, RewardVector};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub query: usize,
    pub answer: Vec<u32>,
    pub difficulty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoy: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub bias: f64,
    #[serde(default)]
    pub trap_bias: f64,
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

// stream tags
const TAG_TASKS: u64 = 1;
const TAG_BATCH: u64 = 2;
const TAG_ROLLOUT: u64 = 3;
const TAG_EVAL: u64 = 4;
const TAG_PROBE: u64 = 5;
const TAG_TRAPS: u64 = 6;

/// Tasks with difficulties evenly spaced over `[0, 1]` and uniformly random
/// answers.
pub fn make_task_set(count: usize, vocab_size: usize, seq_len: usize, bias: f64, seed: u64) -> Result<TaskSet> {
    if count == 0 || vocab_size < 2 || seq_len == 0 {
        return Err(DipoError::invalid(format!(
            "task set needs count >= 1, V >= 2, L >= 1 (got {count}, {vocab_size}, {seq_len})"
        )));
    }
    if !(bias >= 0.0 && bias.is_finite()) {
        return Err(DipoError::invalid("bias must be finite and >= 0"));
    }
    let mut rng = rng_for(seed, &[TAG_TASKS]);
    let tasks = (0..count)
        .map(|query| {
            let difficulty = if count == 1 { 0.5 } else { query as f64 / (count - 1) as f64 };
            let answer = (0..seq_len).map(|_| rng.random_range(0..vocab_size as u32)).collect();
            Task {
                query,
                answer,
                difficulty,
                decoy: None,
            }
        })
        .collect();
    Ok(TaskSet {
        tasks,
        vocab_size,
        seq_len,
        bias,
        trap_bias: bias,
    })
}

impl TaskSet {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Turns `round(fraction * count)` randomly chosen tasks into traps whose
    /// decoy differs from the answer at `positions` random positions and
    /// starts with logit lift `bias`.
    pub fn with_traps(mut self, fraction: f64, positions: usize, bias: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) || positions == 0 || positions > self.seq_len {
            return Err(DipoError::invalid(format!(
                "trap fraction must be in [0, 1] and positions in [1, L] (got {fraction}, {positions})"
            )));
        }
        if !(bias >= 0.0 && bias.is_finite()) {
            return Err(DipoError::invalid("trap bias must be finite and >= 0"));
        }
        self.trap_bias = bias;
        let count = (fraction * self.len() as f64).round() as usize;
        if count == 0 {
            return Ok(self);
        }
        let mut rng = rng_for(seed, &[TAG_TRAPS]);
        let v = self.vocab_size as u32;
        for i in index::sample(&mut rng, self.len(), count) {
            let task = &mut self.tasks[i];
            let mut decoy = task.answer.clone();
            for t in index::sample(&mut rng, self.seq_len, positions) {
                // any token but the answer
                decoy[t] = (decoy[t] + rng.random_range(1..v)) % v;
            }
            task.decoy = Some(decoy);
        }
        Ok(self)
    }

    pub fn trap_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.decoy.is_some()).count()
    }

    pub fn initial_policy(&self) -> PolicyTable {
        let mut policy =
            PolicyTable::uniform(self.tasks.len(), self.seq_len, self.vocab_size).expect("validated dimensions");
        for task in &self.tasks {
            let (target, lift) = match &task.decoy {
                Some(decoy) => (decoy, self.trap_bias),
                None => (&task.answer, self.bias * (1.0 - task.difficulty)),
            };
            for (t, &y) in target.iter().enumerate() {
                policy.logits_mut(task.query, t)[y as usize] = lift;
            }
        }
        policy
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        make_task_set(cfg.num_tasks, cfg.vocab_size, cfg.seq_len, cfg.difficulty_bias, cfg.seed)?
            .with_traps(cfg.trap_fraction, cfg.trap_positions, cfg.trap_bias, cfg.seed)
    }
}

pub fn rollout_group(
    policy: &PolicyTable,
    task: &Task,
    g: usize,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<Group> {
    let rollouts = sample_group(policy, task.query, g, temperature, rng)?;
    let rewards = rollouts
        .iter()
        .map(|o| verify(&o.tokens, &task.answer))
        .collect::<Result<Vec<u8>>>()?;
    Ok(Group {
        query: task.query,
        rollouts,
        rewards: RewardVector::new(rewards)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Mean exact-match rate over `k` samples per task, averaged over tasks.
    pub mean_at_k: f64,
    /// Fraction of tasks solved by at least one of the `k` samples.
    pub pass_at_k: f64,
    pub per_task: Vec<f64>,
}

pub fn evaluate(policy: &PolicyTable, tasks: &TaskSet, k: usize, temperature: f64, seed: u64) -> Result<EvalStats> {
    if k == 0 {
        return Err(DipoError::invalid("evaluation needs k >= 1"));
    }
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut solved = 0usize;
    for task in &tasks.tasks {
        let mut rng = rng_for(seed, &[TAG_EVAL, task.query as u64]);
        let rollouts = sample_group(policy, task.query, k, temperature, &mut rng)?;
        let hits = rollouts
            .iter()
            .filter(|o| o.tokens == task.answer)
            .count();
        solved += usize::from(hits > 0);
        per_task.push(hits as f64 / k as f64);
    }
    Ok(EvalStats {
        mean_at_k: stats::mean(&per_task).unwrap_or(0.0),
        pass_at_k: solved as f64 / tasks.len() as f64,
        per_task,
    })
}

/// Median PPL of wrong rollouts minus median PPL of correct rollouts, from `k`
/// fresh samples per task. `None` if either side is empty.
pub fn ppl_separation(policy: &PolicyTable, tasks: &TaskSet, k: usize, temperature: f64, seed: u64) -> Result<Option<f64>> {
    let (mut correct, mut wrong) = (Vec::new(), Vec::new());
    for task in &tasks.tasks {
        let mut rng = rng_for(seed, &[TAG_PROBE, task.query as u64]);
        let group = rollout_group(policy, task, k.max(2), temperature, &mut rng)?;
        for (o, &r) in group.rollouts.iter().zip(group.rewards.values()) {
            if r == 1 { correct.push(o.ppl) } else { wrong.push(o.ppl) }
        }
    }
    Ok(stats::median(&wrong).zip(stats::median(&correct)).map(|(w, c)| w - c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub groups: usize,
    pub hard: usize,
    pub easy: usize,
    pub normal: usize,
    pub hard_frac: f64,
    pub easy_frac: f64,
    pub normal_frac: f64,
    pub tau_star: Option<f64>,
    pub tau_reason: ThresholdReason,
    pub queue_len: usize,
    /// Mean token entropy at the contexts visited this step, before the update.
    pub h_avg: f64,
    pub mean_ppl_correct: Option<f64>,
    pub mean_ppl_error: Option<f64>,
    pub realloc_exploration: usize,
    pub realloc_exploitation: usize,
    pub realloc_unchanged: usize,
    pub objective_verification: f64,
    pub objective_reallocated: f64,
    pub eval_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ppl_correct: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ppl_error: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

impl RunLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line)
                    .map_err(|e| DipoError::invalid(format!("run log line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records })
    }

    pub fn series(&self, f: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }
}

pub struct TrainingRun {
    pub log: RunLog,
    pub policy: PolicyTable,
    pub tasks: TaskSet,
}

fn batch_tasks<'a>(tasks: &'a TaskSet, cfg: &RunConfig, step: usize) -> Vec<&'a Task> {
    if cfg.batch_groups >= tasks.len() {
        return tasks.tasks.iter().collect();
    }
    let mut rng = rng_for(cfg.seed, &[TAG_BATCH, step as u64]);
    let mut picked = index::sample(&mut rng, tasks.len(), cfg.batch_groups).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| &tasks.tasks[i]).collect()
}

fn sample_batch(policy: &PolicyTable, batch: &[&Task], cfg: &RunConfig, step: usize) -> Result<Vec<Group>> {
    batch
        .iter()
        .map(|task| {
            let mut rng = rng_for(cfg.seed, &[TAG_ROLLOUT, step as u64, task.query as u64]);
            rollout_group(policy, task, cfg.group_size, cfg.temperature, &mut rng)
        })
        .collect()
}

fn batch_entropy(policy: &PolicyTable, groups: &[Group]) -> f64 {
    groups
        .iter()
        .map(|g| mean_entropy(policy, g.query, &g.rollouts))
        .sum::<f64>()
        / groups.len() as f64
}

struct PplSplit {
    correct: Vec<f64>,
    error: Vec<f64>,
}

fn split_ppls(groups: &[Group]) -> PplSplit {
    let mut split = PplSplit {
        correct: Vec::new(),
        error: Vec::new(),
    };
    for g in groups {
        for (o, &r) in g.rollouts.iter().zip(g.rewards.values()) {
            if r == 1 { split.correct.push(o.ppl) } else { split.error.push(o.ppl) }
        }
    }
    split
}

#[allow(clippy::too_many_arguments)]
fn record(
    step: usize,
    groups: &[Group],
    classes: ClassCounts,
    reallocations: ReallocationCounts,
    tau_star: Option<f64>,
    tau_reason: ThresholdReason,
    queue_len: usize,
    h_avg: f64,
    objectives: (f64, f64),
    eval_accuracy: Option<f64>,
    log_ppls: bool,
) -> StepRecord {
    let total = classes.total().max(1) as f64;
    let split = split_ppls(groups);
    StepRecord {
        step,
        groups: classes.total(),
        hard: classes.hard,
        easy: classes.easy,
        normal: classes.normal,
        hard_frac: classes.hard as f64 / total,
        easy_frac: classes.easy as f64 / total,
        normal_frac: classes.normal as f64 / total,
        tau_star,
        tau_reason,
        queue_len,
        h_avg,
        mean_ppl_correct: stats::mean(&split.correct),
        mean_ppl_error: stats::mean(&split.error),
        realloc_exploration: reallocations.exploration,
        realloc_exploitation: reallocations.exploitation,
        realloc_unchanged: reallocations.unchanged,
        objective_verification: objectives.0,
        objective_reallocated: objectives.1,
        eval_accuracy,
        ppl_correct: if log_ppls { split.correct } else { Vec::new() },
        ppl_error: if log_ppls { split.error } else { Vec::new() },
    }
}

fn maybe_eval(policy: &PolicyTable, tasks: &TaskSet, cfg: &RunConfig, step: usize) -> Result<Option<f64>> {
    let due = cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step + 1 == cfg.steps);
    if !due {
        return Ok(None);
    }
    let stats = evaluate(policy, tasks, cfg.eval_k, cfg.eval_temperature, derive_seed(cfg.seed, &[step as u64]))?;
    Ok(Some(stats.mean_at_k))
}

/// Sample, reward, update the PPL queue, select the threshold, reallocate and
/// step, once per training step.
pub fn run_training(cfg: &RunConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    let tasks = TaskSet::from_config(cfg)?;
    let mut policy = tasks.initial_policy();
    let mut queue = PplQueue::new();
    let step_cfg = cfg.step_config();
    let mut log = RunLog::default();

    for step in 0..cfg.steps {
        let batch = batch_tasks(&tasks, cfg, step);
        let groups = sample_batch(&policy, &batch, cfg, step)?;

        let pairs: Vec<(f64, u8)> = groups
            .iter()
            .flat_map(|g| g.rollouts.iter().map(|o| o.ppl).zip(g.rewards.values().iter().copied()))
            .collect();
        queue.push_batch(&pairs, step as u64 + 1)?;
        let report = select_threshold(&queue.snapshot(), cfg.n_min);

        let h_avg = batch_entropy(&policy, &groups);
        let eval_accuracy = maybe_eval(&policy, &tasks, cfg, step)?;
        let step_report = train_step(cfg.algorithm, &mut policy, &groups, report.tau_star, &step_cfg)?;

        log.records.push(record(
            step,
            &groups,
            step_report.classes,
            step_report.reallocations,
            report.tau_star,
            report.reason,
            queue.len(),
            h_avg,
            (step_report.objective_verification, step_report.objective_reallocated),
            eval_accuracy,
            cfg.log_ppls,
        ));
    }
    Ok(TrainingRun { log, policy, tasks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    /// Reward the maximum-PPL rollout of every group.
    Reward,
    /// Penalise the maximum-PPL rollout of every group.
    Penalty,
}

impl std::str::FromStr for EntropyMode {
    type Err = DipoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward" => Ok(Self::Reward),
            "penalty" => Ok(Self::Penalty),
            other => Err(DipoError::invalid(format!("unknown entropy mode `{other}`"))),
        }
    }
}

fn argmax_ppl(rollouts: &[Rollout]) -> usize {
    let mut best = 0;
    for (i, o) in rollouts.iter().enumerate().skip(1) {
        if o.ppl > rollouts[best].ppl {
            best = i;
        }
    }
    best
}

/// Trains on the max-PPL pattern alone, ignoring verification rewards, and
/// logs the average entropy. Every task is sampled at every step.
pub fn run_entropy_experiment(cfg: &RunConfig, mode: EntropyMode) -> Result<TrainingRun> {
    cfg.validate()?;
    let tasks = TaskSet::from_config(cfg)?;
    let mut policy = tasks.initial_policy();
    let clip = cfg.step_config().clip;
    let all: Vec<&Task> = tasks.tasks.iter().collect();
    let mut log = RunLog::default();

    for step in 0..cfg.steps {
        let groups = sample_batch(&policy, &all, cfg, step)?;
        let h_avg = batch_entropy(&policy, &groups);

        let old = policy.clone();
        let mut grad = LogitGrad::zeros_like(&policy);
        let w = 1.0 / groups.len() as f64;
        let mut objective = 0.0;
        let mut classes = ClassCounts::default();
        for g in &groups {
            classes.record(g.class());
            let adv = one_hot_advantages(g.rollouts.len(), argmax_ppl(&g.rollouts), mode == EntropyMode::Reward);
            objective += w * accumulate_surrogate(&policy, &old, g.query, &g.rollouts, &adv, clip, w, &mut grad)?;
        }
        policy.apply(&grad, cfg.eta);

        let (exploration, exploitation) = match mode {
            EntropyMode::Reward => (groups.len(), 0),
            EntropyMode::Penalty => (0, groups.len()),
        };
        log.records.push(record(
            step,
            &groups,
            classes,
            ReallocationCounts {
                exploration,
                exploitation,
                unchanged: 0,
            },
            None,
            ThresholdReason::InsufficientData,
            0,
            h_avg,
            (0.0, objective),
            None,
            cfg.log_ppls,
        ));
    }
    Ok(TrainingRun { log, policy, tasks })
}

/// Spearman correlation between logged `h_avg` and step.
pub fn entropy_trend(log: &RunLog) -> Option<f64> {
    stats::trend(&log.series(|r| r.h_avg))
}
