//! Particle MCMC for state-space smoothing, including models whose target
//! density has no Markovian factorization.
//!
//! The crate is organized around an unnormalized path target
//! `gamma_t(x_{1:t})` that is evaluated through *increments*
//! `gamma_t / gamma_{t-1}`, never as a whole. Everything else builds on that:
//!
//! * [`model`] defines the [`model::ModelTarget`] abstraction (proposal
//!   kernels, target increments, per-lineage sufficient statistics) plus the
//!   [`model::Trajectory`] and [`model::Observations`] containers.
//! * [`smc`] runs auxiliary sequential Monte Carlo with full particle
//!   history, multinomial resampling, and an unbiased normalizer estimate.
//! * [`truncation`] evaluates truncated backward weights
//!   `w_t^m * gamma_{t+p}(..) / gamma_t(..)`, the total-variation based
//!   adaptive rule that picks the truncation level, and the geometric-decay
//!   error bound used to sanity-check both.
//! * [`kernels`] implements the conditional SMC sweeps: particle Gibbs with
//!   ancestor sampling, the backward-simulation variant, forward
//!   filter/backward simulation, particle marginal Metropolis-Hastings, and
//!   the chain driver that ties them to parameter updates and sample storage.
//! * [`gaussian`] is the exact linear-Gaussian reference: Kalman filter,
//!   fixed-interval smoother, conditional (marginalized) filter steps, joint
//!   smoothing draws, and a generator of random stable test systems.
//! * [`models`] holds concrete targets: a plain linear-Gaussian model, the
//!   marginalized (Rao-Blackwellized) linear-Gaussian model, the SVD
//!   reduction of degenerate-noise models, and a coordinated-turn tracking
//!   model with range/bearing measurements.
//!
//! All density computations stay in the log domain; weight normalization
//! subtracts the maximum before exponentiating. Randomness flows through
//! explicit `&mut dyn Rng` arguments so every run is reproducible from a
//! single seed.

pub mod error;
pub mod gaussian;
pub mod kernels;
pub mod math;
pub mod model;
pub mod rng;
pub mod smc;
pub mod truncation;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
