//! Diagonal Gaussian action distribution.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub entropy: f64,
}

/// `log N(action; mean, diag(exp(log_std))^2)`.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Closed-form entropy `sum(log_std) + n/2 (1 + ln 2pi)`.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
}

pub fn sample_action(mean: &[f64], log_std: &[f64], rng: &mut impl Rng) -> Result<ActionSample> {
    if mean.len() != log_std.len() {
        return Err(Error::Shape("mean and log_std differ in length".into()));
    }
    if mean.iter().chain(log_std).any(|v| !v.is_finite()) {
        return Err(Error::invalid("policy output is not finite"));
    }
    let action: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let z: f64 = StandardNormal.sample(rng);
            m + ls.exp() * z
        })
        .collect();
    Ok(ActionSample {
        log_prob: gaussian_log_prob(&action, mean, log_std),
        entropy: gaussian_entropy(log_std),
        action,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_std_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_action(&[1.0, -2.0, 0.5], &[-10.0; 3], &mut rng).unwrap();
        for (a, m) in s.action.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - m).abs() < 1e-3);
        }
    }

    #[test]
    fn standard_normal_entropy_and_density() {
        let h = gaussian_entropy(&[0.0; 3]);
        assert!((h - 1.5 * (1.0 + (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((h - 4.2568).abs() < 1e-4);
        let lp = gaussian_log_prob(&[0.0; 3], &[0.0; 3], &[0.0; 3]);
        assert!((lp + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((lp + 2.7568).abs() < 1e-4);
    }

    #[test]
    fn entropy_matches_monte_carlo() {
        // Oracle: -E[log p(a)] estimated from samples.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mean = [0.3, -1.0, 2.0];
        let log_std = [0.2, -0.5, 0.1];
        let n = 200_000;
        let mc = (0..n)
            .map(|_| -sample_action(&mean, &log_std, &mut rng).unwrap().log_prob)
            .sum::<f64>()
            / n as f64;
        assert!((mc - gaussian_entropy(&log_std)).abs() < 1e-2);
        assert!(gaussian_entropy(&log_std) >= 0.0);
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let a = sample_action(&[0.0; 3], &[0.0; 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_action(&[0.0; 3], &[0.0; 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_action(&[f64::NAN], &[0.0], &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }
}
