use proptest::prelude::*;
use rlscale_core::{init_policy, ArchSpec};

fn fd_rel_error(theta: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-5;
    let mut x = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        worst = worst.max(((up - down) / (2.0 * h) - grad[i]).abs());
    }
    worst / grad.iter().fold(1e-12f64, |m, g| m.max(g.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn logprob_gradient_matches_finite_differences(
        vocab in 3usize..10,
        embed in 2usize..5,
        hidden in 2usize..8,
        seed in any::<u64>(),
        prompt in prop::collection::vec(0u32..3, 1..4),
        response in prop::collection::vec(0u32..3, 1..4),
    ) {
        let arch = ArchSpec { vocab_size: vocab, embed_dim: embed, hidden_dim: hidden, context_window: 8 };
        let p = init_policy(&arch, seed).unwrap();
        let g = p.grad_logprob(&prompt, &response).unwrap();
        let err = fd_rel_error(&p.theta, &g, |t| {
            let mut q = p.clone();
            q.theta.copy_from_slice(t);
            q.logprob_response(&prompt, &response).unwrap().iter().sum()
        });
        prop_assert!(err < 1e-4, "relative error {err:e}");
    }

    #[test]
    fn response_probabilities_normalize(
        seed in any::<u64>(),
        context in prop::collection::vec(0u32..6, 1..6),
        temperature in 0.1f64..3.0,
    ) {
        let arch = ArchSpec { vocab_size: 6, embed_dim: 3, hidden_dim: 5, context_window: 6 };
        let p = init_policy(&arch, seed).unwrap();
        let probs = p.next_token_probs(&context, temperature).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&x| x > 0.0));
    }
}
