//! Slow, obviously-correct reference implementations for testing `pmcmc`.
//!
//! Everything here trades efficiency for directness so that agreement with
//! the main crate is meaningful:
//!
//! - [`joint`] assembles the full joint Gaussian of all states and
//!   observations of a linear-Gaussian model by covariance algebra alone, so
//!   smoothing and likelihood answers come from block conditioning rather
//!   than any filter recursion.
//! - [`backward`] evaluates backward weights by whole-path density
//!   differences instead of incremental partial sums.
//! - [`stats`] holds bare-hands statistical test helpers.
//!
//! This crate is a test dependency; functions panic with a message on misuse
//! instead of returning errors.

pub mod backward;
pub mod joint;
pub mod stats;

pub use backward::brute_force_backward_logweights;
pub use joint::{lgssm_joint, JointGaussian, StackIndex};
pub use stats::{empirical_cdf, kahan_sum, ks_critical, ks_statistic, normal_cdf};
