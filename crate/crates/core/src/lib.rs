//! Desk-scale laboratory for RL post-training scaling studies.
//!
//! The crate trains tiny autoregressive policies with GRPO on synthetic,
//! rule-verifiable tasks, keeps a `6·N·T` FLOPs ledger for every optimizer
//! step, and fits log-linear laws `ln L = -k ln x + E` against compute and
//! unique data, including a check of the slope/intercept linkage that holds
//! when `C = N·D·φ`.
//!
//! Module map:
//!
//! - [`taskgen`]: synthetic task families, the binary verifier, datasets.
//! - [`policy`]: the recurrent softmax policy, sampling and analytic gradients.
//! - [`grpo`]: group advantages, the clipped/KL objective and the trainer.
//! - [`compute`]: FLOPs accounting.
//! - [`schedule`]: curriculum ordering and the data-reuse schedule.
//! - [`runlog`]: step logs, run manifests and run sets.
//! - [`lawfit`]: log-linear fits, per-model tables and the consistency check.
//! - [`experiment`]: config files, single runs, sweeps and analysis commands.

pub mod compute;
pub mod error;
pub mod experiment;
pub mod grpo;
pub mod lawfit;
pub mod policy;
pub mod rng;
pub mod runlog;
pub mod schedule;
pub mod taskgen;

pub use compute::{step_flops, FlopsLedger};
pub use error::{Error, Result};
pub use grpo::{
    compute_advantages, grpo_objective, RolloutGroup, TrainConfig, TrainFailure, TrainerState,
};
pub use lawfit::{check_consistency, fit_loglinear, fit_per_model, ConsistencyReport, FitResult};
pub use policy::{count_params, init_policy, ArchSpec, PolicyParams, Response};
pub use runlog::{RunManifest, RunSet, StepRecord, XAxis, YAxis};
pub use schedule::{curriculum_sort, make_reuse_schedule, Ordering, SampleStream, ScheduleSpec};
pub use taskgen::{build_dataset, generate_task, verify, Dataset, DatasetSpec, Family, TaskInstance};
