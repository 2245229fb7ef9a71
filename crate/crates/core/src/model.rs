//! Path-space targets and their building blocks.
//!
//! A model describes an unnormalized target density `gamma_t(x_{1:t})` over
//! state paths, one per horizon `t`, together with a proposal kernel
//! `r_t(x_t | x_{1:t-1})` used by the samplers. The central identity is that
//! `gamma_t` is only ever touched through its increments,
//!
//! ```text
//! log gamma_t(x_{1:t}) = log gamma_1(x_1)
//!                      + sum_{s=2..t} [log gamma_s(x_{1:s}) - log gamma_{s-1}(x_{1:s-1})]
//! ```
//!
//! For a state-space model with transition `f` and observation density `g`
//! the increment at time `s` is `log f(x_s | x_{1:s-1}) + log g(y_s | x_{1:s})`,
//! but nothing here assumes Markovian structure: marginalized (Rao-
//! Blackwellized) models make the increment depend on the entire prefix.
//!
//! To keep that affordable, every implementation designates a sufficient
//! statistic [`ModelTarget::Stat`] of the prefix (a conditional Kalman belief,
//! a reconstructed latent state, or `()` for Markov models). The statistic is
//! threaded along particle lineages by the SMC engine, so extending a path by
//! one step costs O(1) work in the path length.
//!
//! # Time indexing
//!
//! Code uses 0-based times `t = 0..T`. [`ModelTarget::init_stat`] absorbs
//! `x_0` (and `y_0`), [`ModelTarget::extend_stat`] absorbs `x_t` for `t >= 1`.
//! Observation `t` of an [`Observations`] container belongs to state `t`.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};

/// A finite state path with fixed state dimension.
///
/// Invariants, enforced at construction: at least one state, every state has
/// the same dimension `>= 1`, every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
    dim: usize,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>) -> Result<Self> {
        let first = states.first().ok_or_else(|| Error::validation("empty trajectory"))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::dimension("zero-dimensional state".into()));
        }
        for (t, x) in states.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::dimension(format!(
                    "state {t} has dimension {} but state 0 has {dim}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("state {t}")));
            }
        }
        Ok(Self { states, dim })
    }

    /// Single-state path.
    pub fn from_state(x: DVector<f64>) -> Result<Self> {
        Self::new(vec![x])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor rejects empty paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, t: usize) -> &DVector<f64> {
        &self.states[t]
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is nonempty")
    }

    /// Appends a state; the new state must match the path dimension.
    pub fn push(&mut self, x: DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dimension(format!(
                "appended state has dimension {} but path has {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state {}", self.states.len())));
        }
        self.states.push(x);
        Ok(())
    }

    /// Row-major flattening `[x_0[0..d], x_1[0..d], ..]`, handy for storage.
    pub fn flatten(&self) -> Vec<f64> {
        self.states.iter().flat_map(|x| x.iter().cloned()).collect()
    }

    /// Inverse of [`Trajectory::flatten`].
    pub fn from_flat(flat: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || flat.is_empty() || flat.len() % dim != 0 {
            return Err(Error::dimension(format!(
                "flat length {} is not a positive multiple of dim {dim}",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(dim).map(DVector::from_row_slice).collect())
    }
}

/// Observation sequence `y_0..y_{T-1}` with fixed dimension.
///
/// The dimension may be zero (a predict-only filtering problem); entries must
/// be finite and lengths consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    ys: Vec<DVector<f64>>,
    dim: usize,
}

impl Observations {
    pub fn new(ys: Vec<DVector<f64>>) -> Result<Self> {
        let first = ys.first().ok_or_else(|| Error::validation("empty observation sequence"))?;
        let dim = first.len();
        for (t, y) in ys.iter().enumerate() {
            if y.len() != dim {
                return Err(Error::dimension(format!(
                    "observation {t} has dimension {} but observation 0 has {dim}",
                    y.len()
                )));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("observation {t}")));
            }
        }
        Ok(Self { ys, dim })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, t: usize) -> &DVector<f64> {
        &self.ys[t]
    }

    pub fn all(&self) -> &[DVector<f64>] {
        &self.ys
    }
}

/// A static parameter value together with its log prior density.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub theta: DVector<f64>,
    pub log_prior: f64,
}

impl ParameterState {
    pub fn new(theta: DVector<f64>, log_prior: f64) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        if log_prior.is_nan() {
            return Err(Error::NonFinite("log prior".into()));
        }
        Ok(Self { theta, log_prior })
    }

    /// Placeholder for models without static parameters.
    pub fn empty() -> Self {
        Self { theta: DVector::zeros(0), log_prior: 0.0 }
    }
}

/// An unnormalized path target plus its proposal kernels.
///
/// Implementations must keep all evaluations pure: the same arguments always
/// produce the same values, and `-inf` (never NaN) signals zero density.
pub trait ModelTarget {
    /// Sufficient statistic of a prefix `x_{0:t}` (given the observations up
    /// to `t`). Cloned when particle lineages fork.
    type Stat: Clone;

    /// State dimension.
    fn dim_x(&self) -> usize;

    /// Observation dimension.
    fn dim_y(&self) -> usize;

    /// Number of time steps `T` the target is defined for.
    fn horizon(&self) -> usize;

    /// Draw `x_0` from the initial proposal `r_0`.
    fn sample_initial(&self, rng: &mut dyn Rng) -> DVector<f64>;

    /// `log r_0(x_0)`.
    fn initial_log_density(&self, x0: &DVector<f64>) -> f64;

    /// Absorb `x_0` (and `y_0`): statistic of the length-1 prefix plus
    /// `log gamma_0(x_0)`.
    fn init_stat(&self, x0: &DVector<f64>, obs: &Observations) -> (Self::Stat, f64);

    /// Draw `x_t ~ r_t(. | x_{0:t-1})` for `t >= 1`; `x_prev` is `x_{t-1}`
    /// and `stat` summarizes the whole prefix.
    fn sample_transition(
        &self,
        t: usize,
        x_prev: &DVector<f64>,
        stat: &Self::Stat,
        rng: &mut dyn Rng,
    ) -> DVector<f64>;

    /// `log r_t(x_t | x_{0:t-1})` for `t >= 1`.
    fn transition_log_density(
        &self,
        t: usize,
        x_prev: &DVector<f64>,
        stat: &Self::Stat,
        x_t: &DVector<f64>,
    ) -> f64;

    /// Absorb `x_t` (and `y_t`) for `t >= 1`: updated statistic plus the
    /// target increment `log gamma_t(x_{0:t}) - log gamma_{t-1}(x_{0:t-1})`.
    fn extend_stat(
        &self,
        t: usize,
        x_prev: &DVector<f64>,
        stat: &Self::Stat,
        x_t: &DVector<f64>,
        obs: &Observations,
    ) -> (Self::Stat, f64);

    /// Log adjustment multiplier `log nu_t(x_{0:t})` used to tilt resampling;
    /// zero for the plain bootstrap flow.
    fn log_adjustment(&self, _t: usize, _stat: &Self::Stat, _obs: &Observations) -> f64 {
        0.0
    }
}

/// A family of targets indexed by a static parameter, for samplers that
/// update parameters jointly with paths.
pub trait ModelFamily {
    type Model: ModelTarget;

    fn build(&self, theta: &DVector<f64>) -> Result<Self::Model>;

    /// Log prior density of `theta`; `-inf` outside the support.
    fn log_prior(&self, theta: &DVector<f64>) -> f64;
}

fn check_path<M: ModelTarget>(model: &M, traj: &Trajectory, obs: &Observations) -> Result<()> {
    if traj.dim() != model.dim_x() {
        return Err(Error::dimension(format!(
            "trajectory dim {} vs model dim_x {}",
            traj.dim(),
            model.dim_x()
        )));
    }
    if obs.dim() != model.dim_y() {
        return Err(Error::dimension(format!(
            "observation dim {} vs model dim_y {}",
            obs.dim(),
            model.dim_y()
        )));
    }
    if traj.len() > obs.len() {
        return Err(Error::dimension(format!(
            "trajectory length {} exceeds observation length {}",
            traj.len(),
            obs.len()
        )));
    }
    Ok(())
}

/// Statistic of a whole prefix plus its accumulated `log gamma`.
///
/// Folds [`ModelTarget::init_stat`] and [`ModelTarget::extend_stat`] from
/// scratch; O(t) work, meant for entry points and tests rather than inner
/// loops.
pub fn prefix_stat<M: ModelTarget>(
    model: &M,
    traj: &Trajectory,
    obs: &Observations,
) -> Result<(M::Stat, f64)> {
    check_path(model, traj, obs)?;
    let (mut stat, mut log_gamma) = model.init_stat(traj.state(0), obs);
    for t in 1..traj.len() {
        let (next, inc) = model.extend_stat(t, traj.state(t - 1), &stat, traj.state(t), obs);
        stat = next;
        log_gamma += inc;
    }
    Ok((stat, log_gamma))
}

/// `log gamma_t(x_{0:t})` for `t = traj.len() - 1`.
pub fn log_gamma<M: ModelTarget>(model: &M, traj: &Trajectory, obs: &Observations) -> Result<f64> {
    prefix_stat(model, traj, obs).map(|(_, lg)| lg)
}

/// All `log h_s` factors of a prefix/suffix pair, `s = 1..=suffix.len()`.
///
/// `h_s` is the target increment of the composite path
/// `{x_{0:t}, x'_{t+1:t+s}}` at time `t+s`; summing the first `p` factors
/// gives `log [gamma_{t+p}(composite) / gamma_t(prefix)]`, the truncated
/// backward-weight correction.
pub fn log_h_factors<M: ModelTarget>(
    model: &M,
    prefix: &Trajectory,
    suffix: &[DVector<f64>],
    obs: &Observations,
) -> Result<Vec<f64>> {
    let t0 = prefix.len();
    if t0 + suffix.len() > obs.len() {
        return Err(Error::dimension(format!(
            "prefix {} + suffix {} exceeds observation length {}",
            t0,
            suffix.len(),
            obs.len()
        )));
    }
    let (mut stat, _) = prefix_stat(model, prefix, obs)?;
    let mut prev = prefix.last();
    let mut factors = Vec::with_capacity(suffix.len());
    for (s, x) in suffix.iter().enumerate() {
        if x.len() != prefix.dim() {
            return Err(Error::dimension(format!("suffix state {s} has dimension {}", x.len())));
        }
        let (next, inc) = model.extend_stat(t0 + s, prev, &stat, x, obs);
        factors.push(inc);
        stat = next;
        prev = x;
    }
    Ok(factors)
}

/// Single factor `log h_s`, `1 <= s <= suffix.len()`.
pub fn log_h_factor<M: ModelTarget>(
    model: &M,
    s: usize,
    prefix: &Trajectory,
    suffix: &[DVector<f64>],
    obs: &Observations,
) -> Result<f64> {
    if s == 0 || s > suffix.len() {
        return Err(Error::validation(format!(
            "h-factor index {s} outside 1..={}",
            suffix.len()
        )));
    }
    Ok(log_h_factors(model, prefix, &suffix[..s], obs)?[s - 1])
}

/// Draw `x_t` given a whole prefix, folding the statistic from scratch.
pub fn sample_transition_path<M: ModelTarget>(
    model: &M,
    prefix: &Trajectory,
    obs: &Observations,
    rng: &mut dyn Rng,
) -> Result<DVector<f64>> {
    let (stat, _) = prefix_stat(model, prefix, obs)?;
    Ok(model.sample_transition(prefix.len(), prefix.last(), &stat, rng))
}

/// `log r_t(x_t | prefix)` given a whole prefix.
pub fn transition_log_density_path<M: ModelTarget>(
    model: &M,
    prefix: &Trajectory,
    x_t: &DVector<f64>,
    obs: &Observations,
) -> Result<f64> {
    let (stat, _) = prefix_stat(model, prefix, obs)?;
    Ok(model.transition_log_density(prefix.len(), prefix.last(), &stat, x_t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_rejects_empty_and_ragged() {
        assert!(Trajectory::new(vec![]).is_err());
        let ragged = vec![DVector::zeros(2), DVector::zeros(3)];
        assert!(Trajectory::new(ragged).is_err());
        let nan = vec![DVector::from_vec(vec![f64::NAN])];
        assert!(Trajectory::new(nan).is_err());
    }

    #[test]
    fn trajectory_flatten_roundtrip() {
        let traj = Trajectory::new(vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        ])
        .unwrap();
        let flat = traj.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(Trajectory::from_flat(&flat, 2).unwrap(), traj);
    }

    #[test]
    fn observations_allow_zero_dim() {
        let obs = Observations::new(vec![DVector::zeros(0), DVector::zeros(0)]).unwrap();
        assert_eq!(obs.dim(), 0);
        assert_eq!(obs.len(), 2);
    }

    #[test]
    fn parameter_state_rejects_nan() {
        assert!(ParameterState::new(DVector::from_vec(vec![f64::NAN]), 0.0).is_err());
        assert!(ParameterState::new(DVector::zeros(1), f64::NAN).is_err());
        assert!(ParameterState::new(DVector::zeros(1), f64::NEG_INFINITY).is_ok());
    }
}
