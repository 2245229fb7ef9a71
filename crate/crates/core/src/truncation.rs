//! Truncated backward weights and the adaptive truncation level rule.
//!
//! Backward kernels need, for each particle `m` at time `t`, the weight of
//! attaching the reference suffix `x'_{t+1:T-1}` to that particle's prefix:
//!
//! ```text
//! log w_{t|T}^m = log w_t^m + [log gamma_T(prefix_m ++ suffix) - log gamma_t(prefix_m)]
//! ```
//!
//! The bracket is a sum of per-step increments `log h_s`. Truncating the sum
//! after `p` terms gives the level-`p` approximation; for Markov models one
//! term is exact, and for models with fading memory the error decays
//! geometrically in `p` (see [`kld_bound`] for the quantitative statement).
//!
//! [`BackwardWeightEvaluator`] computes the partial sums incrementally, so
//! walking from level `p` to `p+1` costs one statistic update per particle.
//! The adaptive rule tracks the total-variation distance between consecutive
//! levels through an exponentially weighted moving average and stops once the
//! average falls below a threshold.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::normalize_log_weights;
use crate::model::{prefix_stat, ModelTarget, Observations, Trajectory};
use crate::smc::{CategoricalDist, ParticleFront};

/// Truncation policy for backward-weight evaluation.
///
/// `gamma_forget` is the moving-average memory: small values respond fast to
/// the latest level-to-level change, large values average over many levels.
/// `p_max = None` means the only cap is the remaining horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TruncationConfig {
    Untruncated,
    Fixed {
        level: usize,
    },
    Adaptive {
        #[serde(default = "default_gamma_forget")]
        gamma_forget: f64,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default)]
        p_max: Option<usize>,
    },
}

fn default_gamma_forget() -> f64 {
    0.1
}

fn default_tau() -> f64 {
    1e-2
}

impl TruncationConfig {
    /// Adaptive rule with the standard settings: memory 0.1, threshold 0.01,
    /// no level cap beyond the horizon.
    pub fn default_adaptive() -> Self {
        Self::Adaptive { gamma_forget: default_gamma_forget(), tau: default_tau(), p_max: None }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Untruncated => Ok(()),
            Self::Fixed { level } => {
                if *level == 0 {
                    Err(Error::validation("fixed truncation level must be at least 1"))
                } else {
                    Ok(())
                }
            }
            Self::Adaptive { gamma_forget, tau, p_max } => {
                if !(0.0..=1.0).contains(gamma_forget) {
                    return Err(Error::validation(format!(
                        "forgetting factor {gamma_forget} outside [0, 1]"
                    )));
                }
                if !(0.0..=1.0).contains(tau) {
                    return Err(Error::validation(format!("threshold {tau} outside [0, 1]")));
                }
                if *p_max == Some(0) {
                    return Err(Error::validation("level cap must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

/// Record of one backward-weight evaluation: the normalized distribution at
/// every computed level, the level-to-level TV distances, and the moving
/// average that drove the stopping decision.
#[derive(Debug, Clone)]
pub struct TruncationTrace {
    /// `probs_by_level[p]` is the normalized level-`p` distribution;
    /// level 0 is proportional to the forward weights.
    pub probs_by_level: Vec<Vec<f64>>,
    /// `eps[p-1]` = TV(level p, level p-1).
    pub eps: Vec<f64>,
    /// Moving average aligned with `eps`.
    pub ewma: Vec<f64>,
    /// Level the evaluation stopped at.
    pub level: usize,
    /// Whether the adaptive rule stopped before exhausting the level cap.
    pub stopped_early: bool,
}

impl TruncationTrace {
    fn single_level(probs_by_level: Vec<Vec<f64>>, level: usize) -> Self {
        Self { probs_by_level, eps: Vec::new(), ewma: Vec::new(), level, stopped_early: false }
    }
}

/// Incremental evaluator of truncated backward log-weights for one particle
/// front and one reference suffix.
///
/// After `p` calls to [`BackwardWeightEvaluator::advance`], the weights are
/// `log w_t^m + sum_{s=1..p} log h_s(m)`, where `h_s(m)` is the target
/// increment of particle `m`'s prefix extended by `suffix[0..s]`.
pub struct BackwardWeightEvaluator<'a, M: ModelTarget> {
    model: &'a M,
    obs: &'a Observations,
    t: usize,
    front_states: std::borrow::Cow<'a, [DVector<f64>]>,
    suffix: &'a [DVector<f64>],
    forward_log_weights: Vec<f64>,
    stats: Vec<M::Stat>,
    cum_log_h: Vec<f64>,
    level: usize,
}

impl<'a, M: ModelTarget> BackwardWeightEvaluator<'a, M> {
    /// Start from a particle front (states, prefix statistics, forward log
    /// weights at time `front.t`).
    pub fn from_front(
        model: &'a M,
        obs: &'a Observations,
        front: &ParticleFront<'a, M::Stat>,
        suffix: &'a [DVector<f64>],
    ) -> Result<Self> {
        let n = front.n_particles();
        if n == 0 {
            return Err(Error::validation("empty particle front"));
        }
        if front.stats.len() != n || front.log_weights.len() != n {
            return Err(Error::dimension("front arrays have mismatched lengths".into()));
        }
        if front.t + 1 + suffix.len() > obs.len() {
            return Err(Error::dimension(format!(
                "suffix of length {} starting after time {} exceeds horizon {}",
                suffix.len(),
                front.t,
                obs.len()
            )));
        }
        if front.log_weights.iter().any(|w| w.is_nan()) {
            return Err(Error::NonFinite("forward log weight".into()));
        }
        Ok(Self {
            model,
            obs,
            t: front.t,
            front_states: std::borrow::Cow::Borrowed(front.states),
            suffix,
            forward_log_weights: front.log_weights.to_vec(),
            stats: front.stats.to_vec(),
            cum_log_h: vec![0.0; n],
            level: 0,
        })
    }

    /// Start from explicit prefix paths, folding each statistic from scratch.
    /// All prefixes must have length `t + 1`; heavier than
    /// [`BackwardWeightEvaluator::from_front`] but independent of any sweep.
    pub fn from_trajectories(
        model: &'a M,
        obs: &'a Observations,
        prefixes: &[Trajectory],
        forward_log_weights: &[f64],
        suffix: &'a [DVector<f64>],
    ) -> Result<Self> {
        let n = prefixes.len();
        if n == 0 {
            return Err(Error::validation("no prefixes"));
        }
        if forward_log_weights.len() != n {
            return Err(Error::dimension("one forward weight per prefix is required".into()));
        }
        let t = prefixes[0].len() - 1;
        let mut stats = Vec::with_capacity(n);
        let mut last_states = Vec::with_capacity(n);
        for p in prefixes {
            if p.len() != t + 1 {
                return Err(Error::dimension("prefixes must share one length".into()));
            }
            stats.push(prefix_stat(model, p, obs)?.0);
            last_states.push(p.last().clone());
        }
        if t + 1 + suffix.len() > obs.len() {
            return Err(Error::dimension(format!(
                "suffix of length {} starting after time {t} exceeds horizon {}",
                suffix.len(),
                obs.len()
            )));
        }
        if forward_log_weights.iter().any(|w| w.is_nan()) {
            return Err(Error::NonFinite("forward log weight".into()));
        }
        Ok(Self {
            model,
            obs,
            t,
            front_states: std::borrow::Cow::Owned(last_states),
            suffix,
            forward_log_weights: forward_log_weights.to_vec(),
            stats,
            cum_log_h: vec![0.0; n],
            level: 0,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.cum_log_h.len()
    }

    /// Current truncation level `p`.
    pub fn level(&self) -> usize {
        self.level
    }

    /// Largest reachable level, `suffix.len()`.
    pub fn max_level(&self) -> usize {
        self.suffix.len()
    }

    /// Extend every composite path by one suffix state, accumulating the next
    /// `log h` term.
    pub fn advance(&mut self) -> Result<()> {
        let s = self.level + 1;
        if s > self.suffix.len() {
            return Err(Error::validation(format!(
                "cannot advance past level {}",
                self.suffix.len()
            )));
        }
        let x_new = &self.suffix[s - 1];
        for m in 0..self.stats.len() {
            let prev = if s == 1 { &self.front_states[m] } else { &self.suffix[s - 2] };
            let (stat, inc) =
                self.model.extend_stat(self.t + s, prev, &self.stats[m], x_new, self.obs);
            self.stats[m] = stat;
            self.cum_log_h[m] += inc;
        }
        self.level = s;
        Ok(())
    }

    /// Unnormalized level-`p` backward log weights; entries may be `-inf`.
    pub fn log_weights(&self) -> Vec<f64> {
        self.forward_log_weights
            .iter()
            .zip(&self.cum_log_h)
            .map(|(w, h)| w + h)
            .collect()
    }

    /// Normalized level-`p` probabilities.
    pub fn probs(&self) -> Result<Vec<f64>> {
        normalize_log_weights(&self.log_weights())
            .map_err(|_| Error::DegenerateBackwardWeights { t: self.t })
    }

    /// Level-`p` distribution, ready for sampling.
    pub fn dist(&self) -> Result<CategoricalDist> {
        CategoricalDist::from_log_weights(&self.log_weights())
            .map_err(|_| Error::DegenerateBackwardWeights { t: self.t })
    }
}

/// Truncated backward log weights at a fixed level; `level` must not exceed
/// `suffix.len()`, and `level = suffix.len()` is the untruncated case.
pub fn truncated_backward_logweights<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    front: &ParticleFront<'_, M::Stat>,
    suffix: &[DVector<f64>],
    level: usize,
) -> Result<Vec<f64>> {
    if level > suffix.len() {
        return Err(Error::validation(format!(
            "level {level} exceeds the available suffix length {}",
            suffix.len()
        )));
    }
    let mut eval = BackwardWeightEvaluator::from_front(model, obs, front, suffix)?;
    for _ in 0..level {
        eval.advance()?;
    }
    Ok(eval.log_weights())
}

/// Total variation distance between two distributions on the same index set.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dimension(format!(
            "distributions have sizes {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Kullback-Leibler divergence `sum P log(P/Q)` with `0 log 0 = 0`.
/// Fails where `P` puts mass outside `Q`'s support.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dimension(format!(
            "distributions have sizes {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::validation(format!(
                "support violation at index {i}: P = {pi}, Q = {qi}"
            )));
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc.max(0.0))
}

/// Hypothesis constants of the geometric-decay bound: per-step backward
/// factors satisfying `max_{k,l} (h_s(k) / h_s(l) - 1) <= amplitude * exp(-rate * s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayBoundParams {
    /// `A >= 0`.
    pub amplitude: f64,
    /// `c > 0`.
    pub rate: f64,
    /// Remaining horizon `M`.
    pub horizon: usize,
    /// Truncation level `p <= M`.
    pub level: usize,
}

impl DecayBoundParams {
    pub fn new(amplitude: f64, rate: f64, horizon: usize, level: usize) -> Result<Self> {
        if !(amplitude >= 0.0) {
            return Err(Error::validation(format!("amplitude {amplitude} must be nonnegative")));
        }
        if !(rate > 0.0) {
            return Err(Error::validation(format!("rate {rate} must be positive")));
        }
        if level > horizon {
            return Err(Error::validation(format!("level {level} exceeds horizon {horizon}")));
        }
        Ok(Self { amplitude, rate, horizon, level })
    }
}

/// Closed-form bound on the divergence between the full backward distribution
/// and its level-`p` truncation under the geometric-decay hypothesis:
///
/// ```text
/// A (e^{-c(p+1)} - e^{-c(M+1)}) / (1 - e^{-c})
/// ```
///
/// Exactly zero at `p = M`.
pub fn kld_bound(params: &DecayBoundParams) -> f64 {
    let c = params.rate;
    let p = params.level as f64;
    let m = params.horizon as f64;
    if params.level == params.horizon {
        return 0.0;
    }
    params.amplitude * ((-c * (p + 1.0)).exp() - (-c * (m + 1.0)).exp()) / (1.0 - (-c).exp())
}

/// Backward distribution under the adaptive truncation rule.
///
/// Starting from level 0 (forward weights), each level computes
/// `eps_p = TV(level p, level p-1)` and the moving average
/// `ewma_p = gamma_forget * ewma_{p-1} + (1 - gamma_forget) * eps_p` (seeded
/// with `ewma_1 = eps_1`); evaluation stops when the average drops below
/// `tau` or the level cap `min(p_max, suffix.len())` is reached.
pub fn adaptive_backward_dist<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    front: &ParticleFront<'_, M::Stat>,
    suffix: &[DVector<f64>],
    gamma_forget: f64,
    tau: f64,
    p_max: Option<usize>,
) -> Result<(CategoricalDist, TruncationTrace)> {
    TruncationConfig::Adaptive { gamma_forget, tau, p_max }.validate()?;
    let mut eval = BackwardWeightEvaluator::from_front(model, obs, front, suffix)?;
    let cap = p_max.unwrap_or(usize::MAX).min(suffix.len());

    let mut probs_by_level = vec![eval.probs()?];
    let mut eps = Vec::new();
    let mut ewma = Vec::new();
    let mut stopped_early = false;
    while eval.level() < cap {
        eval.advance()?;
        let probs = eval.probs()?;
        let e = tv_distance(&probs, probs_by_level.last().expect("level 0 is present"))?;
        let avg = match ewma.last() {
            None => e,
            Some(prev) => gamma_forget * prev + (1.0 - gamma_forget) * e,
        };
        probs_by_level.push(probs);
        eps.push(e);
        ewma.push(avg);
        if avg < tau {
            stopped_early = eval.level() < cap;
            break;
        }
    }
    let level = eval.level();
    let dist = eval.dist()?;
    Ok((dist, TruncationTrace { probs_by_level, eps, ewma, level, stopped_early }))
}

/// Backward distribution under any [`TruncationConfig`], with its trace.
pub fn backward_dist<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    front: &ParticleFront<'_, M::Stat>,
    suffix: &[DVector<f64>],
    config: &TruncationConfig,
) -> Result<(CategoricalDist, TruncationTrace)> {
    config.validate()?;
    match config {
        TruncationConfig::Adaptive { gamma_forget, tau, p_max } => {
            adaptive_backward_dist(model, obs, front, suffix, *gamma_forget, *tau, *p_max)
        }
        TruncationConfig::Fixed { level } => {
            fixed_backward_dist(model, obs, front, suffix, (*level).min(suffix.len()))
        }
        TruncationConfig::Untruncated => {
            fixed_backward_dist(model, obs, front, suffix, suffix.len())
        }
    }
}

fn fixed_backward_dist<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    front: &ParticleFront<'_, M::Stat>,
    suffix: &[DVector<f64>],
    level: usize,
) -> Result<(CategoricalDist, TruncationTrace)> {
    let mut eval = BackwardWeightEvaluator::from_front(model, obs, front, suffix)?;
    let mut probs_by_level = Vec::with_capacity(level + 1);
    probs_by_level.push(eval.probs()?);
    for _ in 0..level {
        eval.advance()?;
        probs_by_level.push(eval.probs()?);
    }
    let dist = eval.dist()?;
    Ok((dist, TruncationTrace::single_level(probs_by_level, level)))
}

/// Draw one index from the backward distribution; convenience wrapper that
/// also returns the trace.
pub fn sample_backward_index<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    front: &ParticleFront<'_, M::Stat>,
    suffix: &[DVector<f64>],
    config: &TruncationConfig,
    rng: &mut dyn Rng,
) -> Result<(usize, TruncationTrace)> {
    let (dist, trace) = backward_dist(model, obs, front, suffix, config)?;
    Ok((dist.sample(rng), trace))
}
