//! Statistical test helpers: Kolmogorov-Smirnov machinery, compensated
//! summation, and distribution functions.

use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided Kolmogorov-Smirnov statistic of a sample against a continuous
/// CDF: `sup_x |F_n(x) - F(x)|`, evaluated at the jump points of the
/// empirical CDF from both sides.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!sample.is_empty(), "empty sample");
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("sample contains NaN"));
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        assert!((0.0..=1.0).contains(&f), "cdf({x}) = {f} outside [0, 1]");
        let below = f - i as f64 / n;
        let above = (i + 1) as f64 / n - f;
        d = d.max(below).max(above);
    }
    d
}

/// Asymptotic two-sided critical value at level `alpha`:
/// `sqrt(-ln(alpha / 2) / 2) / sqrt(n)`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha {alpha} outside (0, 1)");
    assert!(n > 0, "empty sample");
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// CDF of `N(mean, sd^2)`.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("sd must be positive").cdf(x)
}

/// Empirical CDF value `F_n(x)` (proportion of sample `<= x`).
pub fn empirical_cdf(sample_sorted: &[f64], x: f64) -> f64 {
    let k = sample_sorted.partition_point(|&v| v <= x);
    k as f64 / sample_sorted.len() as f64
}

/// Kahan compensated sum; reference for accumulation-order-sensitive checks.
pub fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ks_critical_frozen_values() {
        // sqrt(-ln(0.005) / 2) and the Bonferroni-for-3 variant.
        assert_relative_eq!(ks_critical(0.01, 1) / 1.0, 1.6276, epsilon = 1e-4);
        assert_relative_eq!(ks_critical(0.01 / 3.0, 1), 1.7884, epsilon = 1e-4);
        assert_relative_eq!(ks_critical(0.05, 100), 1.3581 / 10.0, epsilon = 1e-4);
    }

    #[test]
    fn ks_statistic_detects_and_accepts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let sample: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d_ok = ks_statistic(&sample, |x| normal_cdf(x, 0.0, 1.0));
        assert!(d_ok < ks_critical(0.01, sample.len()), "d = {d_ok}");
        // Same sample against a shifted law must be rejected decisively.
        let d_bad = ks_statistic(&sample, |x| normal_cdf(x, 0.5, 1.0));
        assert!(d_bad > 3.0 * ks_critical(0.01, sample.len()), "d = {d_bad}");
    }

    #[test]
    fn ks_statistic_exact_tiny_case() {
        // Single point at the median of U(0,1): F_n jumps 0 -> 1 at 0.5,
        // so the statistic is 0.5 from both sides.
        let d = ks_statistic(&[0.5], |x| x.clamp(0.0, 1.0));
        assert_relative_eq!(d, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn empirical_cdf_counts_inclusively() {
        let sample = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(empirical_cdf(&sample, 0.5), 0.0);
        assert_eq!(empirical_cdf(&sample, 2.0), 0.75);
        assert_eq!(empirical_cdf(&sample, 5.0), 1.0);
    }

    #[test]
    fn kahan_sum_beats_naive_on_adversarial_input() {
        // 1 followed by many tiny values that naive summation drops.
        let mut values = vec![1.0_f64];
        values.extend(std::iter::repeat(1e-16).take(10_000));
        let kahan = kahan_sum(&values);
        assert_relative_eq!(kahan, 1.0 + 1e-12, epsilon = 1e-15);
    }
}
