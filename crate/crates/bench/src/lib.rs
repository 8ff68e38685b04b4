//! Fixtures shared by the benchmarks.

use rlscale_core::grpo::rollout_batch;
use rlscale_core::policy::{init_policy, ArchSpec, PolicyParams};
use rlscale_core::taskgen::{generate_task, Family, TaskInstance, VOCAB_SIZE};
use rlscale_core::{RolloutGroup, TrainConfig, TrainerState};

pub fn policy(hidden_dim: usize) -> PolicyParams {
    let arch = ArchSpec {
        vocab_size: VOCAB_SIZE,
        embed_dim: 8,
        hidden_dim,
        context_window: 32,
    };
    init_policy(&arch, 0).expect("valid architecture")
}

pub fn tasks(family: Family, difficulty: u32, n: usize) -> Vec<TaskInstance> {
    (0..n as u64)
        .map(|i| generate_task(family, difficulty, 0, i).expect("valid difficulty"))
        .collect()
}

pub fn config(batch_size: usize, group_size: usize) -> TrainConfig {
    TrainConfig {
        batch_size,
        group_size,
        max_response_len: 8,
        ..Default::default()
    }
}

/// One batch of sampled groups for `hidden_dim`, on copy-reverse difficulty 3.
pub fn groups(hidden_dim: usize, batch_size: usize, group_size: usize) -> (TrainerState, Vec<RolloutGroup>) {
    let state = TrainerState::new(policy(hidden_dim));
    let tasks = tasks(Family::CopyReverse, 3, batch_size);
    let refs: Vec<&TaskInstance> = tasks.iter().collect();
    let (groups, _) = rollout_batch(&state, &refs, &config(batch_size, group_size)).expect("rollouts");
    (state, groups)
}
