use crate::error::{Error, Result};

/// Groups whose reward spread is below this get all-zero advantages.
pub const ZERO_STD_THRESHOLD: f64 = 1e-8;

/// Standard deviation with divisor `G` (no Bessel correction).
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `(r_i - mean(r)) / std(r)`; zeros when `std(r) < 1e-8`.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!(
            "group size must be at least 2, got {}",
            rewards.len()
        )));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let std = population_std(rewards);
    if std < ZERO_STD_THRESHOLD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn hand_examples() {
        assert_eq!(
            compute_advantages(&[1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec![1.0, -1.0, -1.0, 1.0]
        );
        assert_eq!(compute_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        // mean 0.25, variance 0.1875
        let s = 0.1875f64.sqrt();
        let expected = [0.75 / s, -0.25 / s, -0.25 / s, -0.25 / s];
        let got = compute_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(&got, &expected, 1e-15));
        assert!((got[0] - 1.7320508075688772).abs() < 1e-12);
        assert!((got[1] + 0.5773502691896258).abs() < 1e-12);
    }

    #[test]
    fn small_groups_rejected() {
        assert!(compute_advantages(&[1.0]).is_err());
        assert!(compute_advantages(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalized(rewards in prop::collection::vec(-5.0f64..5.0, 2..64)) {
            let a = compute_advantages(&rewards).unwrap();
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            if population_std(&rewards) >= ZERO_STD_THRESHOLD {
                prop_assert!((population_std(&a) - 1.0).abs() < 1e-9);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn shift_and_scale_invariant(
            bits in prop::collection::vec(0u8..2, 2..32),
            shift in -3.0f64..3.0,
            scale in 0.1f64..10.0,
        ) {
            let r: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
            let moved: Vec<f64> = r.iter().map(|x| scale * x + shift).collect();
            let a = compute_advantages(&r).unwrap();
            let b = compute_advantages(&moved).unwrap();
            prop_assert!(close(&a, &b, 1e-9), "{a:?} vs {b:?}");
        }
    }
}
