//! Group Relative Policy Optimization.
//!
//! For each prompt the trainer samples a group of `G` responses, scores them
//! with the binary verifier, normalizes rewards within the group into
//! advantages and maximizes
//!
//! ```text
//! J = 1/G Σ_i 1/|o_i| Σ_t { min[ρ_t Â_i, clip(ρ_t, 1-ε, 1+ε) Â_i] - β KL_t }
//! ```
//!
//! with `ρ_t = π_θ / π_old` per token and `KL_t = e^δ - δ - 1`,
//! `δ = log π_ref - log π_θ`. The loss handed to gradient descent is `-J`.

mod advantage;
mod objective;
mod trainer;

pub use advantage::{compute_advantages, population_std, ZERO_STD_THRESHOLD};
pub use objective::{grpo_objective, kl_estimator, Objective, RolloutGroup};
pub use trainer::{
    evaluate, rollout_batch, train_run, train_step, EvalResult, RunInputs, RunLog, TrainConfig,
    TrainFailure, TrainerState,
};
