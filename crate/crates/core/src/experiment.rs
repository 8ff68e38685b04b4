//! Experiment configs and the commands built on them: single runs, sweeps,
//! fits, consistency checks and checkpoint evaluation.
//!
//! Config files are TOML. Hyperparameters use these key names:
//!
//! ```toml
//! [train]
//! learning_rate = 0.05
//! batch_size = 8
//! group_size = 8
//! kl_loss_coefficient = 0.001
//! clip_ratio = 0.2
//! rollout_temperature_train = 1.0
//! rollout_temperature_eval = 0.7
//! ```
//!
//! The `[full_scale_reference]` section holds the same keys at the values of
//! the large-model reference setup. It is recorded, never used for training.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{evaluate, train_run, EvalResult, RunInputs, TrainConfig};
use crate::lawfit::{
    check_consistency, fit_group, fit_per_model, pooled_series, write_plot_data, ConsistencyReport,
    FitOptions, FitResult,
};
use crate::policy::{count_params, init_policy, ArchSpec, PolicyParams};
use crate::rng::{derive_seed, label_hash};
use crate::runlog::{
    load_runs, EvalSpec, GroupKey, RunManifest, RunSink, StepRecord, XAxis, YAxis, FORMAT_VERSION,
    STEPS_FILE,
};
use crate::schedule::{make_reuse_schedule, Ordering, ScheduleSpec};
use crate::taskgen::{
    build_dataset, build_dataset_excluding, estimate_pass_rate, Dataset, DatasetSpec, Family,
    VOCAB_SIZE,
};

pub const CODE_VERSION: &str = concat!("rlscale-core ", env!("CARGO_PKG_VERSION"));
pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const SCHEDULE_FILE: &str = "schedule.txt";
pub const TRAIN_SET_FILE: &str = "train.jsonl";
pub const EVAL_SET_FILE: &str = "eval.jsonl";
pub const FAILURE_FILE: &str = "failure.txt";
pub const SWEEP_FILE: &str = "sweep.json";
pub const CONSISTENCY_FILE: &str = "consistency.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Run id, or run id prefix in sweeps.
    pub name: String,
    pub variant: String,
    pub seed: u64,
    pub replicates: usize,
    pub out: PathBuf,
    /// Stop a run once its cumulative FLOPs reach this budget.
    pub max_flops: Option<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "run".into(),
            variant: "base".into(),
            seed: 0,
            replicates: 1,
            out: PathBuf::from("runs"),
            max_flops: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Defaults to the longest prompt plus the response budget.
    pub context_window: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: 8,
            hidden_dim: 16,
            context_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub family: Family,
    pub size: usize,
    pub difficulty_min: u32,
    pub difficulty_max: u32,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            family: Family::CopyReverse,
            size: 10,
            difficulty_min: 1,
            difficulty_max: 1,
            seed: 0,
        }
    }
}

impl DataSection {
    fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            family: self.family,
            size: self.size,
            difficulty_min: self.difficulty_min,
            difficulty_max: self.difficulty_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub total_samples: usize,
    pub reuse_factor: usize,
    pub ordering: Ordering,
    pub pass_rate_samples: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            total_samples: 800,
            reuse_factor: 80,
            ordering: Ordering::DifficultyAscending,
            pass_rate_samples: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Defaults to the training pool size.
    pub size: Option<usize>,
    pub difficulty_min: Option<u32>,
    pub difficulty_max: Option<u32>,
    pub dataset_seed: u64,
    pub sample_seed: u64,
    pub every: u64,
    /// Keep training-pool tasks out of the evaluation set.
    pub disjoint: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            size: None,
            difficulty_min: None,
            difficulty_max: None,
            dataset_seed: 1,
            sample_seed: 2,
            every: 10,
            disjoint: false,
        }
    }
}

/// Training hyperparameters as they appear in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub group_size: usize,
    pub kl_loss_coefficient: f64,
    pub clip_ratio: f64,
    pub rollout_temperature_train: f64,
    pub rollout_temperature_eval: f64,
    /// Defaults to the longest prompt in the train and eval sets.
    pub max_prompt_length: Option<usize>,
    /// Defaults to the longest reference response.
    pub max_response_length: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.05,
            batch_size: 8,
            group_size: 8,
            kl_loss_coefficient: 0.001,
            clip_ratio: 0.2,
            rollout_temperature_train: 1.0,
            rollout_temperature_eval: 0.7,
            max_prompt_length: None,
            max_response_length: None,
        }
    }
}

impl TrainSection {
    pub fn full_scale_reference() -> Self {
        let r = TrainConfig::full_scale_reference();
        TrainSection {
            learning_rate: r.learning_rate,
            batch_size: r.batch_size,
            group_size: r.group_size,
            kl_loss_coefficient: r.kl_coeff,
            clip_ratio: r.clip_ratio,
            rollout_temperature_train: r.train_temperature,
            rollout_temperature_eval: r.eval_temperature,
            max_prompt_length: Some(r.max_prompt_len),
            max_response_length: Some(r.max_response_len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub eval: EvalSection,
    pub train: TrainSection,
    #[serde(default = "TrainSection::full_scale_reference")]
    pub full_scale_reference: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentSection::default(),
            model: ModelSection::default(),
            data: DataSection::default(),
            schedule: ScheduleSection::default(),
            eval: EvalSection::default(),
            train: TrainSection::default(),
            full_scale_reference: TrainSection::full_scale_reference(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.replicates == 0 {
            return Err(Error::Config("experiment.replicates must be at least 1".into()));
        }
        if self.experiment.name.is_empty() || self.experiment.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "experiment.name `{}` must be a non-empty single path component",
                self.experiment.name
            )));
        }
        if let Some(c) = self.experiment.max_flops {
            if !(c > 0.0) {
                return Err(Error::Config(format!("experiment.max_flops must be > 0, got {c}")));
            }
        }
        if self.eval.every == 0 {
            return Err(Error::Config("eval.every must be at least 1".into()));
        }
        if self.schedule.pass_rate_samples == 0 {
            return Err(Error::Config("schedule.pass_rate_samples must be at least 1".into()));
        }
        self.plan("check", self.experiment.seed).map(|_| ())
    }

    fn eval_spec(&self) -> DatasetSpec {
        DatasetSpec {
            family: self.data.family,
            size: self.eval.size.unwrap_or(self.data.size),
            difficulty_min: self.eval.difficulty_min.unwrap_or(self.data.difficulty_min),
            difficulty_max: self.eval.difficulty_max.unwrap_or(self.data.difficulty_max),
        }
    }

    /// Resolves the config into a manifest for one run.
    ///
    /// Initialization, schedule and rollout seeds are derived from `seed`;
    /// the task pool and the evaluation set use the fixed data seeds, so all
    /// runs of a sweep see the same tasks.
    pub fn plan(&self, run_id: &str, seed: u64) -> Result<RunManifest> {
        let dataset = self.data.spec();
        let eval_dataset = self.eval_spec();
        for (name, spec) in [("data", &dataset), ("eval", &eval_dataset)] {
            if spec.difficulty_min > spec.difficulty_max {
                return Err(Error::Config(format!("{name}.difficulty_min > difficulty_max")));
            }
            let (lo, hi) = spec.family.difficulty_range();
            if spec.difficulty_min < lo || spec.difficulty_max > hi {
                return Err(Error::Config(format!(
                    "{name} difficulties must lie in {lo}..={hi} for {}",
                    spec.family
                )));
            }
        }
        let (train_prompt, train_answer) = dataset.max_lengths();
        let (eval_prompt, eval_answer) = eval_dataset.max_lengths();
        let t = &self.train;
        let max_prompt_len = t.max_prompt_length.unwrap_or(train_prompt.max(eval_prompt));
        // ANS, the answer, EOS
        let max_response_len = t
            .max_response_length
            .unwrap_or(train_answer.max(eval_answer) + 2);
        let arch = ArchSpec {
            vocab_size: VOCAB_SIZE,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            context_window: self
                .model
                .context_window
                .unwrap_or(max_prompt_len + max_response_len),
        };
        let n_nonembed = count_params(&arch)?;
        let train = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            group_size: t.group_size,
            kl_coeff: t.kl_loss_coefficient,
            clip_ratio: t.clip_ratio,
            train_temperature: t.rollout_temperature_train,
            eval_temperature: t.rollout_temperature_eval,
            max_prompt_len,
            max_response_len,
            seed: derive_seed(seed, &[label_hash("rollout")]),
        };
        train.validate()?;
        if max_prompt_len < train_prompt.max(eval_prompt) {
            return Err(Error::Config(format!(
                "train.max_prompt_length {max_prompt_len} is shorter than the longest prompt {}",
                train_prompt.max(eval_prompt)
            )));
        }
        if max_prompt_len >= arch.context_window {
            return Err(Error::Config(format!(
                "model.context_window {} leaves no room for a response after {max_prompt_len} prompt tokens",
                arch.context_window
            )));
        }
        let schedule = ScheduleSpec {
            total_samples: self.schedule.total_samples,
            reuse_factor: self.schedule.reuse_factor,
            batch_size: t.batch_size,
            ordering: self.schedule.ordering,
            seed: derive_seed(seed, &[label_hash("schedule")]),
        };
        schedule.validate()?;
        if schedule.subset_size() > dataset.size {
            return Err(Error::Config(format!(
                "schedule needs {} unique tasks but data.size is {}",
                schedule.subset_size(),
                dataset.size
            )));
        }
        Ok(RunManifest {
            format_version: FORMAT_VERSION,
            run_id: run_id.to_owned(),
            variant: self.experiment.variant.clone(),
            arch,
            n_nonembed,
            init_seed: derive_seed(seed, &[label_hash("init")]),
            train,
            schedule,
            pass_rate_samples: self.schedule.pass_rate_samples,
            dataset,
            dataset_seed: self.data.seed,
            eval: EvalSpec {
                dataset: eval_dataset,
                dataset_seed: self.eval.dataset_seed,
                disjoint: self.eval.disjoint,
                sample_seed: self.eval.sample_seed,
                every: self.eval.every,
            },
            max_flops: self.experiment.max_flops,
            code_version: CODE_VERSION.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub dir: PathBuf,
    pub n_nonembed: usize,
    pub steps: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub cumulative_flops: f64,
    pub unique_samples: u64,
}

fn summarize(manifest: &RunManifest, dir: &Path, records: &[StepRecord]) -> RunSummary {
    let evals: Vec<f64> = records.iter().filter_map(|r| r.eval_loss).collect();
    let last = records.last();
    RunSummary {
        run_id: manifest.run_id.clone(),
        dir: dir.to_path_buf(),
        n_nonembed: manifest.n_nonembed,
        steps: last.map_or(0, |r| r.step),
        initial_loss: evals.first().copied().unwrap_or(f64::NAN),
        final_loss: evals.last().copied().unwrap_or(f64::NAN),
        cumulative_flops: last.map_or(0.0, |r| r.cumulative_flops),
        unique_samples: last.map_or(0, |r| r.unique_samples_seen),
    }
}

/// Builds the training pool and evaluation set a manifest describes.
pub fn build_datasets(manifest: &RunManifest) -> Result<(Dataset, Dataset)> {
    let pool = build_dataset(&manifest.dataset, manifest.dataset_seed)?;
    let eval = if manifest.eval.disjoint {
        let exclude: HashSet<String> = pool.instances.iter().map(|t| t.task_id.clone()).collect();
        build_dataset_excluding(&manifest.eval.dataset, manifest.eval.dataset_seed, &exclude)?
    } else {
        build_dataset(&manifest.eval.dataset, manifest.eval.dataset_seed)?
    };
    Ok((pool, eval))
}

/// Executes the run a manifest describes, writing into `dir`:
/// the manifest, the step log, the policy checkpoint, the schedule and both
/// task sets. On failure the records so far stay on disk and the error is
/// also written to a failure note.
pub fn execute_run(manifest: &RunManifest, dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let failure_path = dir.join(FAILURE_FILE);
    if failure_path.exists() {
        std::fs::remove_file(&failure_path).map_err(|e| Error::io(&failure_path, e))?;
    }
    manifest.write(dir)?;
    let (pool, eval_set) = build_datasets(manifest)?;
    pool.write_jsonl(&dir.join(TRAIN_SET_FILE))?;
    eval_set.write_jsonl(&dir.join(EVAL_SET_FILE))?;
    let policy = init_policy(&manifest.arch, manifest.init_seed)?;
    let pass_rates = match manifest.schedule.ordering {
        Ordering::DifficultyAscending => None,
        Ordering::PassRateDescending => Some(pass_rates(&policy, &pool, manifest)?),
    };
    let stream = make_reuse_schedule(&pool, &manifest.schedule, pass_rates.as_ref())?;
    stream.write(&dir.join(SCHEDULE_FILE))?;

    let mut sink = RunSink::create(&dir.join(STEPS_FILE))?;
    let outcome = train_run(
        RunInputs {
            config: &manifest.train,
            initial_policy: policy,
            stream: &stream,
            pool: &pool,
            eval_set: &eval_set,
            eval_every: manifest.eval.every,
            eval_seed: manifest.eval.sample_seed,
            max_flops: manifest.max_flops,
        },
        &mut |r| sink.append_record(r),
    );
    sink.sync()?;
    match outcome {
        Ok(log) => {
            log.policy.save(&dir.join(CHECKPOINT_FILE))?;
            Ok(summarize(manifest, dir, &log.records))
        }
        Err(failure) => {
            failure.partial.policy.save(&dir.join(CHECKPOINT_FILE))?;
            std::fs::write(&failure_path, format!("{failure}\n"))
                .map_err(|e| Error::io(&failure_path, e))?;
            Err(failure.error)
        }
    }
}

fn pass_rates(
    policy: &PolicyParams,
    pool: &Dataset,
    manifest: &RunManifest,
) -> Result<HashMap<String, f64>> {
    let seed = derive_seed(manifest.init_seed, &[label_hash("pass-rate")]);
    pool.instances
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let rate = estimate_pass_rate(
                policy,
                task,
                manifest.pass_rate_samples,
                manifest.train.train_temperature,
                derive_seed(seed, &[i as u64]),
            )?;
            Ok((task.task_id.clone(), rate))
        })
        .collect()
}

/// `config.experiment.out/<name>` with the experiment seed.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary> {
    let manifest = config.plan(&config.experiment.name, config.experiment.seed)?;
    execute_run(&manifest, &config.experiment.out.join(&manifest.run_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Hidden width; each value is a `hidden_dim`.
    ModelSize,
    /// Unique samples `D`; total samples become `D · τ`.
    DataBudget,
    /// Reuse factor `τ` at fixed total samples.
    ReuseTau,
    GroupSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ModelSize => "model_size",
            SweepAxis::DataBudget => "data_budget",
            SweepAxis::ReuseTau => "reuse_tau",
            SweepAxis::GroupSize => "group_size",
        }
    }

    pub fn apply(self, config: &mut ExperimentConfig, value: u64) {
        let v = value as usize;
        match self {
            SweepAxis::ModelSize => config.model.hidden_dim = v,
            SweepAxis::DataBudget => {
                config.schedule.total_samples = v * config.schedule.reuse_factor
            }
            SweepAxis::ReuseTau => config.schedule.reuse_factor = v,
            SweepAxis::GroupSize => config.train.group_size = v,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model_size" => Ok(SweepAxis::ModelSize),
            "data_budget" => Ok(SweepAxis::DataBudget),
            "reuse_tau" => Ok(SweepAxis::ReuseTau),
            "group_size" => Ok(SweepAxis::GroupSize),
            _ => Err(Error::Config(format!(
                "unknown sweep axis `{s}` (expected model_size, data_budget, reuse_tau or group_size)"
            ))),
        }
    }
}

/// Seed of replicate `r` at sweep value `v`.
pub fn sweep_seed(base: u64, axis: SweepAxis, value: u64, replicate: usize) -> u64 {
    derive_seed(base, &[label_hash(axis.name()), value, replicate as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub run_id: String,
    pub value: u64,
    pub replicate: usize,
    pub seed: u64,
    pub n_nonembed: usize,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub axis: SweepAxis,
    pub values: Vec<u64>,
    pub replicates: usize,
    pub base_seed: u64,
    pub runs: Vec<SweepEntry>,
}

impl SweepManifest {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }
}

/// One run per `(value, replicate)` under `config.experiment.out`, executed
/// in parallel. Run failures are recorded in the sweep manifest and do not
/// stop the other runs.
pub fn cmd_sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[u64],
    replicates: usize,
) -> Result<SweepManifest> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let base = config.experiment.seed;
    let mut plans = Vec::new();
    for &v in values {
        let mut cfg = config.clone();
        axis.apply(&mut cfg, v);
        for r in 0..replicates {
            let run_id = format!("{}-{}-{v}-r{r}", config.experiment.name, axis);
            let seed = sweep_seed(base, axis, v, r);
            let manifest = cfg
                .plan(&run_id, seed)
                .map_err(|e| Error::Config(format!("{axis} = {v}: {e}")))?;
            plans.push((v, r, seed, manifest));
        }
    }
    let out = &config.experiment.out;
    let runs: Vec<SweepEntry> = plans
        .par_iter()
        .map(|(v, r, seed, manifest)| {
            let result = execute_run(manifest, &out.join(&manifest.run_id));
            SweepEntry {
                run_id: manifest.run_id.clone(),
                value: *v,
                replicate: *r,
                seed: *seed,
                n_nonembed: manifest.n_nonembed,
                final_loss: result.as_ref().ok().map(|s| s.final_loss),
                error: result.err().map(|e| e.to_string()),
            }
        })
        .collect();
    let sweep = SweepManifest {
        axis,
        values: values.to_vec(),
        replicates,
        base_seed: base,
        runs,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(SWEEP_FILE);
    let mut text = serde_json::to_string_pretty(&sweep)
        .map_err(|e| Error::Data(format!("serializing sweep manifest: {e}")))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(sweep)
}

pub fn fit_table_name(x: XAxis, y: YAxis) -> String {
    format!("fit-{x}-{y}.csv")
}

#[derive(Debug)]
pub struct FitSummary {
    pub table: PathBuf,
    pub rows: Vec<FitResult>,
    pub errors: Vec<(GroupKey, Error)>,
    pub dropped_partial_lines: usize,
}

/// Fits every group under `runs_dir` and writes the table plus per-group
/// plot data (`x,y,fitted_y`) into `out_dir`.
pub fn cmd_fit(
    runs_dir: &Path,
    out_dir: &Path,
    x: XAxis,
    y: YAxis,
    options: &FitOptions,
) -> Result<FitSummary> {
    options.validate()?;
    let runset = load_runs(&[runs_dir.to_path_buf()])?;
    if runset.is_empty() {
        return Err(Error::Data(format!("no runs found under {}", runs_dir.display())));
    }
    let plot_dir = out_dir.join(format!("plot-{x}-{y}"));
    std::fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    let groups = runset.groups();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (key, result) in fit_per_model(&runset, x, y, options) {
        match result {
            Ok(fit) => {
                let pooled = pooled_series(&groups[&key], x, y, options)?;
                let path = plot_dir.join(format!("{key}.csv"));
                write_plot_data(&path, &pooled.points, &fit.line())?;
                rows.push(fit);
            }
            Err(e) => errors.push((key, e)),
        }
    }
    let table = out_dir.join(fit_table_name(x, y));
    let file = std::fs::File::create(&table).map_err(|e| Error::io(&table, e))?;
    crate::lawfit::emit_table(&rows, file)?;
    Ok(FitSummary {
        table,
        rows,
        errors,
        dropped_partial_lines: runset.dropped_partial_lines,
    })
}

#[derive(Debug)]
pub struct CheckRow {
    pub key: GroupKey,
    pub fits: Option<(FitResult, FitResult)>,
    pub report: Result<ConsistencyReport>,
}

/// Loss-vs-compute and loss-vs-data fits per group and their consistency
/// report, written to `out_dir/consistency.csv`. An empty directory gives a
/// header-only report.
pub fn cmd_check(runs_dir: &Path, out_dir: &Path, options: &FitOptions) -> Result<Vec<CheckRow>> {
    options.validate()?;
    let runset = load_runs(&[runs_dir.to_path_buf()])?;
    let mut rows = Vec::new();
    for (key, runs) in runset.groups() {
        let fits = fit_group(&key, &runs, XAxis::Flops, YAxis::Loss, options).and_then(|c| {
            fit_group(&key, &runs, XAxis::Data, YAxis::Loss, options).map(|d| (c, d))
        });
        let row = match fits {
            Ok((c, d)) => CheckRow {
                report: check_consistency(&c, &d, key.model_n, &runs),
                key,
                fits: Some((c, d)),
            },
            Err(e) => CheckRow {
                key,
                fits: None,
                report: Err(e),
            },
        };
        rows.push(row);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(CONSISTENCY_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_check_rows(&rows, file).map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))?;
    Ok(rows)
}

fn write_check_rows(rows: &[CheckRow], out: impl std::io::Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model_n",
        "variant",
        "k_c",
        "e_c",
        "k_d",
        "e_d",
        "phi",
        "phi_dispersion",
        "k_gap",
        "intercept_residual",
        "exact",
        "error",
    ])?;
    for row in rows {
        let mut cells = vec![row.key.model_n.to_string(), row.key.variant.clone()];
        match &row.fits {
            Some((c, d)) => cells.extend([c.k, c.e, d.k, d.e].map(|v| v.to_string())),
            None => cells.extend(std::iter::repeat_n(String::new(), 4)),
        }
        match &row.report {
            Ok(r) => {
                cells.extend(
                    [r.phi, r.phi_dispersion, r.k_gap, r.intercept_residual].map(|v| v.to_string()),
                );
                cells.push(r.exact.to_string());
                cells.push(String::new());
            }
            Err(e) => {
                cells.extend(std::iter::repeat_n(String::new(), 5));
                cells.push(e.to_string());
            }
        }
        w.write_record(&cells)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint and a JSON-lines task set and evaluates with one
/// sample per task. `max_len` defaults to the longest reference response.
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    temperature: f64,
    seed: u64,
    max_len: Option<usize>,
) -> Result<EvalResult> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let policy = PolicyParams::load(checkpoint)?;
    let tasks = Dataset::read_jsonl(dataset)?;
    let budget = max_len.unwrap_or_else(|| {
        tasks
            .instances
            .iter()
            .map(|t| t.reference_response().len())
            .max()
            .unwrap_or(1)
    });
    evaluate(&policy, &tasks.instances, temperature, budget, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.schedule.total_samples = 16;
        cfg.schedule.reuse_factor = 2;
        cfg.train.batch_size = 4;
        cfg.train.group_size = 4;
        cfg.model.hidden_dim = 4;
        cfg.eval.every = 2;
        cfg
    }

    #[test]
    fn hyperparameter_keys_verbatim() {
        let text = ExperimentConfig::default().to_toml();
        for key in [
            "learning_rate",
            "batch_size",
            "kl_loss_coefficient",
            "rollout_temperature_train",
            "rollout_temperature_eval",
            "clip_ratio",
            "group_size",
        ] {
            assert!(text.contains(&format!("{key} = ")), "missing {key}");
        }
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, ExperimentConfig::default());
    }

    #[test]
    fn full_scale_reference_values() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        let r = &cfg.full_scale_reference;
        assert_eq!(r.learning_rate, 1e-6);
        assert_eq!(r.batch_size, 512);
        assert_eq!(r.kl_loss_coefficient, 0.001);
        assert_eq!(r.rollout_temperature_train, 1.0);
        assert_eq!(r.rollout_temperature_eval, 0.7);
        assert_eq!(r.clip_ratio, 0.2);
        assert_eq!(r.max_prompt_length, Some(2048));
        assert_eq!(r.max_response_length, Some(4096));
    }

    #[test]
    fn field_level_errors() {
        let err = ExperimentConfig::from_toml("[train]\nclip_ratio = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("clip_ratio"), "{err}");
        let err = ExperimentConfig::from_toml("[train]\nlearnin_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learnin_rate"), "{err}");
        let err = ExperimentConfig::from_toml("[experiment]\nreplicates = 0\n").unwrap_err();
        assert!(err.to_string().contains("replicates"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn plan_derives_lengths_and_seeds() {
        let cfg = tiny();
        let m = cfg.plan("a", 3).unwrap();
        assert_eq!(m.train.max_prompt_len, 3);
        assert_eq!(m.train.max_response_len, 3);
        assert_eq!(m.arch.context_window, 6);
        assert_eq!(m.schedule.batch_size, 4);
        let other = cfg.plan("a", 4).unwrap();
        assert_ne!(m.init_seed, other.init_seed);
        assert_ne!(m.train.seed, other.train.seed);
        assert_eq!(m.dataset_seed, other.dataset_seed);
    }

    #[test]
    fn sweep_seeds_distinct() {
        let mut seen = HashSet::new();
        for axis in [SweepAxis::ModelSize, SweepAxis::GroupSize] {
            for v in [4, 8, 16] {
                for r in 0..3 {
                    assert!(seen.insert(sweep_seed(0, axis, v, r)));
                }
            }
        }
        assert_eq!(sweep_seed(5, SweepAxis::ReuseTau, 5, 1), sweep_seed(5, SweepAxis::ReuseTau, 5, 1));
    }

    #[test]
    fn run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.experiment.out = dir.path().to_path_buf();
        let s = cmd_run(&cfg).unwrap();
        assert_eq!(s.steps, 4);
        for f in ["manifest", STEPS_FILE, CHECKPOINT_FILE, SCHEDULE_FILE, TRAIN_SET_FILE, EVAL_SET_FILE] {
            assert!(s.dir.join(f).exists(), "{f}");
        }
        let eval = cmd_eval(
            &s.dir.join(CHECKPOINT_FILE),
            &s.dir.join(EVAL_SET_FILE),
            0.7,
            cfg.eval.sample_seed,
            None,
        )
        .unwrap();
        assert_eq!(eval.total, 10);
        assert_eq!(eval.loss(), s.final_loss);
    }

    #[test]
    fn pass_rate_ordering_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.schedule.ordering = Ordering::PassRateDescending;
        cfg.schedule.pass_rate_samples = 4;
        cfg.experiment.out = dir.path().to_path_buf();
        assert_eq!(cmd_run(&cfg).unwrap().steps, 4);
    }
}
