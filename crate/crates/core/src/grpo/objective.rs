use crate::error::{Error, Result};
use crate::policy::{PolicyParams, Response};
use crate::taskgen::Token;

use super::advantage::compute_advantages;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub task_id: String,
    pub prompt: Vec<Token>,
    pub responses: Vec<Response>,
    /// Per-token log-probabilities under the policy that generated the group.
    pub old_logprobs: Vec<Vec<f64>>,
    /// Per-token log-probabilities under the frozen reference policy.
    pub ref_logprobs: Vec<Vec<f64>>,
    pub rewards: Vec<u8>,
}

impl RolloutGroup {
    pub fn group_size(&self) -> usize {
        self.responses.len()
    }

    pub fn tokens_processed(&self) -> u64 {
        self.responses
            .iter()
            .map(|r| (self.prompt.len() + r.len()) as u64)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.responses.len();
        if g < 2 {
            return Err(Error::Data(format!(
                "group {} has {} responses, need at least 2",
                self.task_id, g
            )));
        }
        if self.old_logprobs.len() != g || self.ref_logprobs.len() != g || self.rewards.len() != g
        {
            return Err(Error::Data(format!(
                "group {}: {} responses, {} old, {} ref, {} rewards",
                self.task_id,
                g,
                self.old_logprobs.len(),
                self.ref_logprobs.len(),
                self.rewards.len()
            )));
        }
        for (i, r) in self.responses.iter().enumerate() {
            let n = r.len();
            if n == 0 || self.old_logprobs[i].len() != n || self.ref_logprobs[i].len() != n {
                return Err(Error::Data(format!(
                    "group {} response {i}: {n} tokens, {} old, {} ref log-probabilities",
                    self.task_id,
                    self.old_logprobs[i].len(),
                    self.ref_logprobs[i].len()
                )));
            }
        }
        Ok(())
    }
}

/// Non-negative per-token KL estimate `e^δ - δ - 1`, `δ = ref - cur`.
pub fn kl_estimator(cur: f64, reference: f64) -> f64 {
    let d = reference - cur;
    d.exp() - d - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// `-J`, the quantity gradient descent minimizes.
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_kl: f64,
    /// Fraction of tokens whose gradient was cut by the clip.
    pub clip_fraction: f64,
}

/// Clipped surrogate per token and its derivative with respect to the
/// current log-probability. Where `clip` is selected the derivative is zero;
/// on a tie (including the clip boundary) the unclipped branch is used.
fn surrogate(cur: f64, old: f64, adv: f64, eps: f64) -> (f64, f64, bool) {
    let ratio = (cur - old).exp();
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped, false)
    } else {
        (clipped, 0.0, true)
    }
}

/// Negated GRPO objective of one group and its exact gradient.
pub fn grpo_objective(
    policy: &PolicyParams,
    group: &RolloutGroup,
    eps: f64,
    beta: f64,
) -> Result<Objective> {
    group.validate()?;
    let rewards: Vec<f64> = group.rewards.iter().map(|&r| f64::from(r)).collect();
    let adv = compute_advantages(&rewards)?;
    let g = group.group_size() as f64;
    let mut grad = vec![0.0; policy.theta.len()];
    let mut objective = 0.0;
    let mut kl_total = 0.0;
    let mut tokens = 0usize;
    let mut clipped_tokens = 0usize;
    for (i, response) in group.responses.iter().enumerate() {
        let len = response.len() as f64;
        let old = &group.old_logprobs[i];
        let reference = &group.ref_logprobs[i];
        let mut per_response = 0.0;
        policy.weighted_grad_with(&group.prompt, &response.tokens, &mut grad, |cur| {
            cur.iter()
                .enumerate()
                .map(|(t, &lp)| {
                    let (surr, dsurr, was_clipped) = surrogate(lp, old[t], adv[i], eps);
                    let kl = kl_estimator(lp, reference[t]);
                    let dkl = 1.0 - (reference[t] - lp).exp();
                    per_response += surr - beta * kl;
                    kl_total += kl;
                    clipped_tokens += usize::from(was_clipped);
                    -(dsurr - beta * dkl) / (g * len)
                })
                .collect()
        })?;
        tokens += response.len();
        objective += per_response / len;
    }
    Ok(Objective {
        loss: -objective / g,
        grad,
        mean_kl: kl_total / tokens as f64,
        clip_fraction: clipped_tokens as f64 / tokens as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_policy, ArchSpec};

    fn arch2() -> ArchSpec {
        ArchSpec {
            vocab_size: 2,
            embed_dim: 1,
            hidden_dim: 1,
            context_window: 8,
        }
    }

    /// All weights zero except the output bias, so p(token 0) = σ(b0 - b1) everywhere.
    fn bias_only(b0: f64, b1: f64) -> PolicyParams {
        let a = arch2();
        let mut p = init_policy(&a, 0).unwrap();
        p.theta.iter_mut().for_each(|w| *w = 0.0);
        let n = p.theta.len();
        p.theta[n - 2] = b0;
        p.theta[n - 1] = b1;
        p
    }

    fn group_for(policy: &PolicyParams, reference: &PolicyParams, rs: &[Vec<Token>], rewards: &[u8]) -> RolloutGroup {
        let prompt = vec![1];
        let responses: Vec<Response> = rs
            .iter()
            .map(|t| Response {
                tokens: t.clone(),
                logprobs: policy.logprob_response(&prompt, t).unwrap(),
            })
            .collect();
        RolloutGroup {
            task_id: "t".into(),
            old_logprobs: responses.iter().map(|r| r.logprobs.clone()).collect(),
            ref_logprobs: rs
                .iter()
                .map(|t| reference.logprob_response(&prompt, t).unwrap())
                .collect(),
            prompt,
            responses,
            rewards: rewards.to_vec(),
        }
    }

    #[test]
    fn ratio_one_without_kl() {
        let p = init_policy(
            &ArchSpec {
                vocab_size: 5,
                embed_dim: 3,
                hidden_dim: 4,
                context_window: 12,
            },
            1,
        )
        .unwrap();
        let rs = vec![vec![1, 2, 0], vec![3], vec![4, 4], vec![2, 0]];
        let rewards = [1, 0, 1, 1];
        let group = group_for(&p, &p, &rs, &rewards);
        let obj = grpo_objective(&p, &group, 0.2, 0.0).unwrap();
        let adv = compute_advantages(&[1.0, 0.0, 1.0, 1.0]).unwrap();
        let expected = -adv.iter().sum::<f64>() / 4.0;
        assert!((obj.loss - expected).abs() < 1e-12);
        assert_eq!(obj.clip_fraction, 0.0);
        // with KL against itself the value is unchanged
        let with_kl = grpo_objective(&p, &group, 0.2, 0.5).unwrap();
        assert!((with_kl.loss - expected).abs() < 1e-12);
        assert!(with_kl.mean_kl.abs() < 1e-12);
    }

    #[test]
    fn equal_rewards_at_reference_give_zero() {
        let p = bias_only(0.2, -0.1);
        let group = group_for(&p, &p, &[vec![0, 1], vec![1]], &[1, 1]);
        let obj = grpo_objective(&p, &group, 0.2, 0.01).unwrap();
        assert_eq!(obj.loss, 0.0);
        assert!(obj.grad.iter().all(|&g| g == 0.0));
    }

    /// Term-by-term evaluation with hand-set numbers.
    #[test]
    fn hand_evaluation_two_token_vocab() {
        let cur = bias_only(0.5, 0.0);
        let old = bias_only(0.0, 0.0);
        let reference = bias_only(-0.3, 0.0);
        let rs = vec![vec![0, 0], vec![1]];
        let mut group = group_for(&old, &reference, &rs, &[1, 0]);
        group.old_logprobs = rs
            .iter()
            .map(|t| old.logprob_response(&[1], t).unwrap())
            .collect();

        let (eps, beta) = (0.2, 0.1);
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        // p_cur(0) = σ(0.5), p_old(0) = 0.5, p_ref(0) = σ(-0.3)
        let (pc0, po0, pr0) = (sig(0.5), 0.5, sig(-0.3));
        // advantages for rewards [1, 0]: [1, -1]
        // response 0: two copies of token 0, ρ = pc0 / 0.5 = 1.2449 > 1.2 → clipped to 1.2 with A=+1
        let rho0 = pc0 / po0;
        assert!(rho0 > 1.2);
        let surr0 = rho0.min(1.2);
        let d0 = pr0.ln() - pc0.ln();
        let kl0 = d0.exp() - d0 - 1.0;
        let j0 = (2.0 * (surr0 - beta * kl0)) / 2.0;
        // response 1: token 1, ρ = (1-pc0)/0.5 = 0.755 < 0.8, A=-1 → min(-0.755, -0.8) = -0.8
        let rho1 = (1.0 - pc0) / (1.0 - po0);
        assert!(rho1 < 0.8);
        let surr1 = (-rho1).min(-0.8);
        let d1 = (1.0 - pr0).ln() - (1.0 - pc0).ln();
        let kl1 = d1.exp() - d1 - 1.0;
        let j1 = surr1 - beta * kl1;
        let expected = -(j0 + j1) / 2.0;

        let obj = grpo_objective(&cur, &group, eps, beta).unwrap();
        assert!((obj.loss - expected).abs() < 1e-14, "{} vs {}", obj.loss, expected);
        assert_eq!(obj.clip_fraction, 1.0);
    }

    #[test]
    fn mismatched_lengths_are_data_errors() {
        let p = bias_only(0.0, 0.0);
        let mut group = group_for(&p, &p, &[vec![0, 1], vec![1]], &[1, 0]);
        group.old_logprobs[1].push(0.0);
        assert!(matches!(grpo_objective(&p, &group, 0.2, 0.0), Err(Error::Data(_))));
        let mut single = group_for(&p, &p, &[vec![0, 1], vec![1]], &[1, 0]);
        single.responses.pop();
        single.old_logprobs.pop();
        single.ref_logprobs.pop();
        single.rewards.pop();
        assert!(grpo_objective(&p, &single, 0.2, 0.0).is_err());
    }

    #[test]
    fn kl_estimator_is_non_negative() {
        for cur in [-5.0, -1.0, -0.1, 0.0] {
            for reference in [-6.0, -2.0, -0.5, 0.0] {
                assert!(kl_estimator(cur, reference) >= 0.0);
            }
        }
        assert_eq!(kl_estimator(-0.7, -0.7), 0.0);
    }
}
