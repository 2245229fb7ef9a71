//! Whole-path reference for backward weights.
//!
//! The main crate accumulates backward weights from incremental `log h`
//! factors. The reference below instead evaluates, per particle, two complete
//! unnormalized path densities and subtracts: no shared partial sums, no
//! statistic threading, nothing to go wrong in the same way twice.

use nalgebra::DVector;
use pmcmc::model::{log_gamma, ModelTarget, Observations, Trajectory};

/// Level-`level` backward log weights of `prefixes` against a reference
/// suffix:
///
/// ```text
/// log w_t^m + log gamma_{t+level}(prefix_m ++ suffix[..level]) - log gamma_t(prefix_m)
/// ```
///
/// `level = suffix.len()` gives the untruncated weights.
pub fn brute_force_backward_logweights<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    prefixes: &[Trajectory],
    forward_log_weights: &[f64],
    suffix: &[DVector<f64>],
    level: usize,
) -> Vec<f64> {
    assert!(!prefixes.is_empty(), "no prefixes");
    assert_eq!(prefixes.len(), forward_log_weights.len(), "one weight per prefix");
    assert!(level <= suffix.len(), "level {level} exceeds suffix length {}", suffix.len());
    prefixes
        .iter()
        .zip(forward_log_weights)
        .map(|(prefix, &logw)| {
            let base = log_gamma(model, prefix, obs).expect("prefix density");
            let mut composite = prefix.clone();
            for x in &suffix[..level] {
                composite.push(x.clone()).expect("suffix state dimension");
            }
            let extended = log_gamma(model, &composite, obs).expect("composite density");
            logw + extended - base
        })
        .collect()
}
