use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compute::FlopsLedger;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng::derive_seed;
use crate::runlog::StepRecord;
use crate::schedule::SampleStream;
use crate::taskgen::{verify, Dataset, TaskInstance};

use super::objective::{grpo_objective, RolloutGroup};

const ROLLOUT_TAG: u64 = 0x726f_6c6c;
const EVAL_TAG: u64 = 0x6576_616c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Prompts per optimizer step.
    pub batch_size: usize,
    /// Responses per prompt, `G`.
    pub group_size: usize,
    /// `β`.
    pub kl_coeff: f64,
    /// `ε`.
    pub clip_ratio: f64,
    pub train_temperature: f64,
    pub eval_temperature: f64,
    pub max_prompt_len: usize,
    pub max_response_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Toy-scale defaults.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            group_size: 8,
            kl_coeff: 0.001,
            clip_ratio: 0.2,
            train_temperature: 1.0,
            eval_temperature: 0.7,
            max_prompt_len: 16,
            max_response_len: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Hyperparameters of the full-scale reference setup. Kept for the
    /// record; training at that learning rate and batch size is not
    /// meaningful for the toy policies here.
    pub fn full_scale_reference() -> Self {
        TrainConfig {
            learning_rate: 1.0e-6,
            batch_size: 512,
            kl_coeff: 0.001,
            clip_ratio: 0.2,
            train_temperature: 1.0,
            eval_temperature: 0.7,
            max_prompt_len: 2048,
            max_response_len: 4096,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return fail(format!("train.clip_ratio must be in (0, 1), got {}", self.clip_ratio));
        }
        if !(self.kl_coeff >= 0.0) {
            return fail(format!("train.kl_loss_coefficient must be >= 0, got {}", self.kl_coeff));
        }
        if self.group_size < 2 {
            return fail(format!("train.group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.train_temperature > 0.0) || !(self.eval_temperature > 0.0) {
            return fail("rollout temperatures must be > 0".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("train.learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_prompt_len == 0 || self.max_response_len == 0 {
            return fail("train.batch_size, max_prompt_len and max_response_len must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub policy: PolicyParams,
    /// Frozen copy of the initial policy.
    pub reference: PolicyParams,
    pub step: u64,
    pub cumulative_tokens: u64,
    pub ledger: FlopsLedger,
}

impl TrainerState {
    pub fn new(policy: PolicyParams) -> Self {
        let ledger = FlopsLedger::new(policy.n_nonembed);
        TrainerState {
            reference: policy.clone(),
            policy,
            step: 0,
            cumulative_tokens: 0,
            ledger,
        }
    }

    pub fn cumulative_flops(&self) -> f64 {
        self.ledger.total()
    }
}

/// Samples `G` responses per task at the training temperature.
///
/// Response `i` of task `j` at the upcoming step uses seed
/// `derive_seed(config.seed, [tag, step + 1, j, i])`, so results do not
/// depend on the order rollouts execute in. Returns the groups and the
/// number of processed tokens (prompt plus response, over all rollouts).
pub fn rollout_batch(
    state: &TrainerState,
    tasks: &[&TaskInstance],
    config: &TrainConfig,
) -> Result<(Vec<RolloutGroup>, u64)> {
    if tasks.is_empty() {
        return Err(Error::Data("rollout batch needs at least one task".into()));
    }
    let step = state.step + 1;
    let groups = tasks
        .par_iter()
        .enumerate()
        .map(|(j, task)| {
            let mut group = RolloutGroup {
                task_id: task.task_id.clone(),
                prompt: task.prompt.clone(),
                responses: Vec::with_capacity(config.group_size),
                old_logprobs: Vec::with_capacity(config.group_size),
                ref_logprobs: Vec::with_capacity(config.group_size),
                rewards: Vec::with_capacity(config.group_size),
            };
            for i in 0..config.group_size {
                let seed = derive_seed(config.seed, &[ROLLOUT_TAG, step, j as u64, i as u64]);
                let r = state.policy.sample(
                    &task.prompt,
                    config.train_temperature,
                    config.max_response_len,
                    seed,
                )?;
                group.rewards.push(verify(task, &r.tokens));
                group.old_logprobs.push(r.logprobs.clone());
                group
                    .ref_logprobs
                    .push(state.reference.logprob_response(&task.prompt, &r.tokens)?);
                group.responses.push(r);
            }
            Ok(group)
        })
        .collect::<Result<Vec<_>>>()?;
    let tokens = groups.iter().map(RolloutGroup::tokens_processed).sum();
    Ok((groups, tokens))
}

/// One plain gradient-descent update with the objective gradient summed
/// over groups.
///
/// The returned record has `unique_samples_seen = 0` and no eval loss;
/// [`train_run`] fills both. On a non-finite loss or gradient the state is
/// left untouched.
pub fn train_step(
    state: &mut TrainerState,
    groups: &[RolloutGroup],
    config: &TrainConfig,
) -> Result<StepRecord> {
    if groups.is_empty() {
        return Err(Error::Data("train step needs at least one group".into()));
    }
    let objectives = groups
        .par_iter()
        .map(|g| grpo_objective(&state.policy, g, config.clip_ratio, config.kl_coeff))
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; state.policy.theta.len()];
    let mut loss = 0.0;
    for obj in &objectives {
        loss += obj.loss;
        for (acc, g) in grad.iter_mut().zip(&obj.grad) {
            *acc += g;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient at step {}",
            state.step + 1
        )));
    }
    let tokens: u64 = groups.iter().map(RolloutGroup::tokens_processed).sum();
    for (w, g) in state.policy.theta.iter_mut().zip(&grad) {
        *w -= config.learning_rate * g;
    }
    state.step += 1;
    state.cumulative_tokens += tokens;
    let cumulative_flops = state.ledger.accumulate(tokens);

    let n_responses: usize = groups.iter().map(RolloutGroup::group_size).sum();
    let reward_sum: u64 = groups
        .iter()
        .flat_map(|g| g.rewards.iter().map(|&r| u64::from(r)))
        .sum();
    let length_sum: usize = groups
        .iter()
        .flat_map(|g| g.responses.iter().map(|r| r.len()))
        .sum();
    Ok(StepRecord {
        step: state.step,
        tokens_this_step: tokens,
        cumulative_tokens: state.cumulative_tokens,
        cumulative_flops,
        unique_samples_seen: 0,
        train_reward_mean: reward_sum as f64 / n_responses as f64,
        mean_response_length: length_sum as f64 / n_responses as f64,
        eval_loss: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Correct answers, `R`.
    pub correct: usize,
    /// Evaluated tasks, `R_max`.
    pub total: usize,
}

impl EvalResult {
    /// `L = 1 - R / R_max`.
    pub fn loss(&self) -> f64 {
        1.0 - self.correct as f64 / self.total as f64
    }
}

/// One sample per task at `temperature`; task `i` uses seed
/// `derive_seed(seed, [tag, i])`.
pub fn evaluate(
    policy: &PolicyParams,
    tasks: &[TaskInstance],
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<EvalResult> {
    if tasks.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let correct = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let r = policy.sample(
                &task.prompt,
                temperature,
                max_len,
                derive_seed(seed, &[EVAL_TAG, i as u64]),
            )?;
            Ok(usize::from(verify(task, &r.tokens)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(EvalResult {
        correct,
        total: tasks.len(),
    })
}

pub struct RunInputs<'a> {
    pub config: &'a TrainConfig,
    pub initial_policy: PolicyParams,
    pub stream: &'a SampleStream,
    /// Task pool the stream's ids refer to.
    pub pool: &'a Dataset,
    pub eval_set: &'a Dataset,
    pub eval_every: u64,
    pub eval_seed: u64,
    /// Stop once cumulative FLOPs reach this budget.
    pub max_flops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub policy: PolicyParams,
}

#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    /// Everything recorded before the failure.
    pub partial: RunLog,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} records)",
            self.error,
            self.partial.records.len()
        )
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Trains over the stream batch by batch.
///
/// Evaluation happens before the first step (record with `step = 0`), at
/// every multiple of `eval_every`, and after the final step. Each record is
/// passed to `observer` as soon as it exists.
pub fn train_run(
    inputs: RunInputs<'_>,
    observer: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> std::result::Result<RunLog, TrainFailure> {
    let mut state = TrainerState::new(inputs.initial_policy.clone());
    let mut records = Vec::new();
    let outcome = run_loop(&inputs, &mut state, &mut records, observer);
    let log = RunLog {
        records,
        policy: state.policy,
    };
    match outcome {
        Ok(()) => Ok(log),
        Err(error) => Err(TrainFailure {
            error,
            partial: log,
        }),
    }
}

fn run_loop(
    inputs: &RunInputs<'_>,
    state: &mut TrainerState,
    records: &mut Vec<StepRecord>,
    observer: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> Result<()> {
    let config = inputs.config;
    config.validate()?;
    if inputs.eval_every == 0 {
        return Err(Error::Config("eval_every must be at least 1".into()));
    }
    if inputs.stream.batch_size != config.batch_size {
        return Err(Error::Config(format!(
            "schedule batch size {} differs from train.batch_size {}",
            inputs.stream.batch_size, config.batch_size
        )));
    }
    let eval = |policy: &PolicyParams| -> Result<f64> {
        Ok(evaluate(
            policy,
            &inputs.eval_set.instances,
            config.eval_temperature,
            config.max_response_len,
            inputs.eval_seed,
        )?
        .loss())
    };
    let initial = StepRecord {
        step: 0,
        tokens_this_step: 0,
        cumulative_tokens: 0,
        cumulative_flops: 0.0,
        unique_samples_seen: 0,
        train_reward_mean: 0.0,
        mean_response_length: 0.0,
        eval_loss: Some(eval(&state.policy)?),
    };
    observer(&initial)?;
    records.push(initial);

    let lookup: std::collections::HashMap<&str, &TaskInstance> = inputs
        .pool
        .instances
        .iter()
        .map(|t| (t.task_id.as_str(), t))
        .collect();
    let mut seen: HashSet<&str> = HashSet::new();
    let n_batches = inputs.stream.batches().count();
    for (b, batch) in inputs.stream.batches().enumerate() {
        if inputs.max_flops.is_some_and(|c| state.cumulative_flops() >= c) {
            break;
        }
        let tasks = batch
            .iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("scheduled task {id} is not in the pool")))
            })
            .collect::<Result<Vec<_>>>()?;
        for t in &tasks {
            if t.prompt.len() > config.max_prompt_len {
                return Err(Error::Config(format!(
                    "task {} prompt length {} exceeds train.max_prompt_len {}",
                    t.task_id,
                    t.prompt.len(),
                    config.max_prompt_len
                )));
            }
        }
        let (groups, _) = rollout_batch(state, &tasks, config)?;
        let mut record = train_step(state, &groups, config)?;
        seen.extend(batch.iter().map(String::as_str));
        record.unique_samples_seen = seen.len() as u64;
        let last = b + 1 == n_batches
            || inputs.max_flops.is_some_and(|c| state.cumulative_flops() >= c);
        if last || record.step % inputs.eval_every == 0 {
            record.eval_loss = Some(eval(&state.policy)?);
        }
        observer(&record)?;
        records.push(record);
    }
    Ok(())
}
