//! FLOPs accounting.
//!
//! A training step over `T` processed tokens costs `2NT` for the forward
//! pass and `4NT` for the backward pass, `6NT` in total, with `N` the
//! non-embedding parameter count. Compute `C` is the running sum of
//! per-step costs. Token counts are exact integers; FLOPs are `f64`.

use serde::{Deserialize, Serialize};

pub fn forward_flops(n: usize, t: u64) -> f64 {
    2.0 * n as f64 * t as f64
}

pub fn backward_flops(n: usize, t: u64) -> f64 {
    4.0 * n as f64 * t as f64
}

/// `6 · n · t`.
pub fn step_flops(n: usize, t: u64) -> f64 {
    6.0 * n as f64 * t as f64
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub n_nonembed: usize,
    pub per_step_tokens: Vec<u64>,
    pub per_step_flops: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl FlopsLedger {
    pub fn new(n_nonembed: usize) -> Self {
        FlopsLedger {
            n_nonembed,
            ..Default::default()
        }
    }

    /// Appends one step of `t_step` tokens and returns the new cumulative total.
    pub fn accumulate(&mut self, t_step: u64) -> f64 {
        let flops = step_flops(self.n_nonembed, t_step);
        let total = self.total() + flops;
        self.per_step_tokens.push(t_step);
        self.per_step_flops.push(flops);
        self.cumulative.push(total);
        total
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.per_step_tokens.iter().sum()
    }

    pub fn steps(&self) -> usize {
        self.per_step_tokens.len()
    }

    /// Rebuilds a ledger from token counts alone.
    pub fn replay(n_nonembed: usize, tokens: &[u64]) -> Self {
        let mut ledger = Self::new(n_nonembed);
        for &t in tokens {
            ledger.accumulate(t);
        }
        ledger
    }
}
