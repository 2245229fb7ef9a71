//! Sequential Monte Carlo over path targets.
//!
//! The sweep follows the auxiliary formulation: ancestors at time `t` are
//! drawn from the previous weights tilted by the adjustment multipliers
//! `nu_{t-1}`, new states come from the model's proposal kernel, and the
//! incremental weight is
//!
//! ```text
//! log w_t = [log gamma_t - log gamma_{t-1}] - log nu_{t-1}(ancestor) - log r_t(x_t)
//! ```
//!
//! With `nu = 1` this is the bootstrap flow. The running normalizing-constant
//! estimate accounts for the tilt, so it stays unbiased for any `nu`.
//!
//! Resampling uses the inverse-CDF rule `min { i : F(i) >= u }` with
//! `u ~ U(0, 1]`, which makes every draw a pure function of one uniform. That
//! convention is relied on for reproducibility and for the coupling tests.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, normalize_log_weights};
use crate::model::{ModelTarget, Observations, Trajectory};
use crate::rng::uniform_open_closed;

/// Discrete distribution over `0..len` with precomputed CDF.
#[derive(Debug, Clone)]
pub struct CategoricalDist {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    /// Largest index with positive probability; fp overshoot falls back here.
    last_support: usize,
}

impl CategoricalDist {
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        Self::from_probs(normalize_log_weights(log_weights)?)
    }

    /// Accepts any nonnegative, finite, not-all-zero weights; normalizes.
    pub fn from_probs(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::validation("empty probability vector"));
        }
        let mut total = 0.0;
        for (i, p) in probs.iter().enumerate() {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::validation(format!("probability {i} is {p}")));
            }
            total += p;
        }
        if total <= 0.0 {
            return Err(Error::validation("probabilities sum to zero"));
        }
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        let mut last_support = 0;
        for (i, p) in probs.iter_mut().enumerate() {
            *p /= total;
            acc += *p;
            cumulative.push(acc);
            if *p > 0.0 {
                last_support = i;
            }
        }
        Ok(Self { probs, cumulative, last_support })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty vectors
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index from one uniform draw via the right-continuous inverse CDF.
    pub fn sample(&self, rng: &mut dyn Rng) -> usize {
        self.index_for(uniform_open_closed(rng))
    }

    /// `n` independent draws.
    ///
    /// Consumes exactly `n` uniforms in slot order and then maps each through
    /// the inverse CDF (sorting internally for one cumulative sweep), so the
    /// result is identical to `n` successive [`CategoricalDist::sample`]
    /// calls.
    pub fn sample_many(&self, n: usize, rng: &mut dyn Rng) -> Vec<usize> {
        let mut draws: Vec<(f64, usize)> =
            (0..n).map(|slot| (uniform_open_closed(rng), slot)).collect();
        draws.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("uniforms are never NaN"));
        let mut out = vec![0usize; n];
        let mut i = 0;
        for (u, slot) in draws {
            while i < self.cumulative.len() && self.cumulative[i] < u {
                i += 1;
            }
            out[slot] = if i == self.cumulative.len() { self.last_support } else { i };
        }
        out
    }

    fn index_for(&self, u: f64) -> usize {
        let mut i = 0;
        while i < self.cumulative.len() && self.cumulative[i] < u {
            i += 1;
        }
        if i == self.cumulative.len() {
            self.last_support
        } else {
            i
        }
    }
}

/// `1 / sum(p_i^2)` of the normalized weights; `N` when uniform, `1` when
/// degenerate.
pub fn effective_sample_size(log_weights: &[f64]) -> Result<f64> {
    let probs = normalize_log_weights(log_weights)?;
    Ok(1.0 / probs.iter().map(|p| p * p).sum::<f64>())
}

/// Borrowed view of one time slice of a particle system: states, prefix
/// statistics, and (untilted) log weights. The backward-weight machinery
/// works on fronts so it serves both stored histories and in-flight sweeps.
#[derive(Debug)]
pub struct ParticleFront<'a, S> {
    pub t: usize,
    pub states: &'a [DVector<f64>],
    pub stats: &'a [S],
    pub log_weights: &'a [f64],
}

impl<'a, S> ParticleFront<'a, S> {
    pub fn n_particles(&self) -> usize {
        self.states.len()
    }
}

/// Full record of one SMC sweep.
///
/// Index convention: `ancestors[t][i]` is the time-`t-1` parent of particle
/// `(t, i)`; `ancestors[0]` is empty. `stats[t][i]` summarizes the whole
/// lineage prefix of `(t, i)`, and `log_weights` are the untilted weights.
#[derive(Debug, Clone)]
pub struct SmcHistory<S> {
    states: Vec<Vec<DVector<f64>>>,
    stats: Vec<Vec<S>>,
    log_weights: Vec<Vec<f64>>,
    ancestors: Vec<Vec<usize>>,
    log_norm_increments: Vec<f64>,
}

impl<S> SmcHistory<S> {
    pub(crate) fn from_parts(
        states: Vec<Vec<DVector<f64>>>,
        stats: Vec<Vec<S>>,
        log_weights: Vec<Vec<f64>>,
        ancestors: Vec<Vec<usize>>,
        log_norm_increments: Vec<f64>,
    ) -> Self {
        Self { states, stats, log_weights, ancestors, log_norm_increments }
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_particles(&self) -> usize {
        self.states[0].len()
    }

    pub fn state(&self, t: usize, i: usize) -> &DVector<f64> {
        &self.states[t][i]
    }

    pub fn states_at(&self, t: usize) -> &[DVector<f64>] {
        &self.states[t]
    }

    pub fn stat(&self, t: usize, i: usize) -> &S {
        &self.stats[t][i]
    }

    pub fn log_weights_at(&self, t: usize) -> &[f64] {
        &self.log_weights[t]
    }

    pub fn ancestors_at(&self, t: usize) -> &[usize] {
        &self.ancestors[t]
    }

    pub fn front_at(&self, t: usize) -> ParticleFront<'_, S> {
        ParticleFront {
            t,
            states: &self.states[t],
            stats: &self.stats[t],
            log_weights: &self.log_weights[t],
        }
    }

    /// Per-step increments of the log normalizing-constant estimate.
    pub fn log_norm_increments(&self) -> &[f64] {
        &self.log_norm_increments
    }

    /// Unbiased estimate of `log Z_T` (in the sense that `exp` of it has the
    /// exact normalizer as expectation).
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm_increments.iter().sum()
    }

    /// Weighted distribution over particles at time `t`.
    pub fn dist_at(&self, t: usize) -> Result<CategoricalDist> {
        CategoricalDist::from_log_weights(&self.log_weights[t])
    }

    /// Ancestral indices of the lineage ending at `(len-1, final_index)`,
    /// oldest first.
    pub fn trace_indices(&self, final_index: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.len()];
        let mut cur = final_index;
        for t in (0..self.len()).rev() {
            idx[t] = cur;
            if t > 0 {
                cur = self.ancestors[t][cur];
            }
        }
        idx
    }

    /// State path of the lineage ending at `(len-1, final_index)`.
    pub fn trace_lineage(&self, final_index: usize) -> Result<Trajectory> {
        let idx = self.trace_indices(final_index);
        Trajectory::new(idx.iter().enumerate().map(|(t, &i)| self.states[t][i].clone()).collect())
    }
}

/// One unconditional SMC sweep with `n_particles` particles.
///
/// Requires `obs.len() == model.horizon()`. Fails with
/// [`Error::ParticleCollapse`] when every particle reaches zero weight.
pub fn run_smc<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    n_particles: usize,
    rng: &mut dyn Rng,
) -> Result<SmcHistory<M::Stat>> {
    let t_len = check_smc_inputs(model, obs, n_particles)?;
    let n = n_particles;

    let mut states: Vec<Vec<DVector<f64>>> = Vec::with_capacity(t_len);
    let mut stats: Vec<Vec<M::Stat>> = Vec::with_capacity(t_len);
    let mut log_weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    let mut log_norm_increments = Vec::with_capacity(t_len);

    // t = 0: propose from the initial kernel.
    let mut xs = Vec::with_capacity(n);
    let mut ss = Vec::with_capacity(n);
    let mut lw = Vec::with_capacity(n);
    for _ in 0..n {
        let x = model.sample_initial(rng);
        let (stat, lg) = model.init_stat(&x, obs);
        lw.push(lg - model.initial_log_density(&x));
        xs.push(x);
        ss.push(stat);
    }
    log_norm_increments.push(step_log_norm(&lw, n, 0)?);
    states.push(xs);
    stats.push(ss);
    log_weights.push(lw);
    ancestors.push(Vec::new());

    for t in 1..t_len {
        let prev_w = &log_weights[t - 1];
        let log_nu: Vec<f64> =
            (0..n).map(|i| model.log_adjustment(t - 1, &stats[t - 1][i], obs)).collect();
        let tilted: Vec<f64> = prev_w.iter().zip(&log_nu).map(|(w, nu)| w + nu).collect();
        let dist = CategoricalDist::from_log_weights(&tilted)
            .map_err(|_| Error::ParticleCollapse { t: t - 1 })?;
        let anc = dist.sample_many(n, rng);

        let mut xs = Vec::with_capacity(n);
        let mut ss = Vec::with_capacity(n);
        let mut lw = Vec::with_capacity(n);
        for &a in &anc {
            let prev_x = &states[t - 1][a];
            let prev_s = &stats[t - 1][a];
            let x = model.sample_transition(t, prev_x, prev_s, rng);
            let (stat, inc) = model.extend_stat(t, prev_x, prev_s, &x, obs);
            lw.push(inc - log_nu[a] - model.transition_log_density(t, prev_x, prev_s, &x));
            xs.push(x);
            ss.push(stat);
        }
        let log_c = log_sum_exp(&tilted) - log_sum_exp(prev_w);
        log_norm_increments.push(step_log_norm(&lw, n, t)? + log_c);
        states.push(xs);
        stats.push(ss);
        log_weights.push(lw);
        ancestors.push(anc);
    }

    Ok(SmcHistory::from_parts(states, stats, log_weights, ancestors, log_norm_increments))
}

pub(crate) fn check_smc_inputs<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    n_particles: usize,
) -> Result<usize> {
    if n_particles == 0 {
        return Err(Error::validation("at least one particle is required"));
    }
    if obs.dim() != model.dim_y() {
        return Err(Error::dimension(format!(
            "observation dim {} vs model dim_y {}",
            obs.dim(),
            model.dim_y()
        )));
    }
    let t_len = model.horizon();
    if t_len == 0 {
        return Err(Error::validation("model horizon is zero"));
    }
    if obs.len() != t_len {
        return Err(Error::dimension(format!(
            "observation length {} vs model horizon {t_len}",
            obs.len()
        )));
    }
    Ok(t_len)
}

/// `log [ (1/N) sum w ]` with collapse and NaN detection.
pub(crate) fn step_log_norm(log_weights: &[f64], n: usize, t: usize) -> Result<f64> {
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(Error::NonFinite(format!("particle weight at step {t}")));
    }
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::ParticleCollapse { t });
    }
    Ok(lse - (n as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    /// Feeds back predetermined `next_u64` values; for exercising exact
    /// uniform draws.
    struct FixedRng {
        values: Vec<u64>,
        at: usize,
    }

    impl rand::Rng for FixedRng {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }

        fn next_u64(&mut self) -> u64 {
            let v = self.values[self.at % self.values.len()];
            self.at += 1;
            v
        }

        fn fill_bytes(&mut self, dst: &mut [u8]) {
            for chunk in dst.chunks_mut(8) {
                let bytes = self.next_u64().to_le_bytes();
                chunk.copy_from_slice(&bytes[..chunk.len()]);
            }
        }
    }

    /// `next_u64` value that makes `uniform_open_closed` return exactly `u`.
    fn raw_for_uniform(u: f64) -> u64 {
        // uniform_open_closed = 1 - (raw >> 11) * 2^-53.
        let frac = 1.0 - u;
        ((frac * (1u64 << 53) as f64) as u64) << 11
    }

    /// Scalar Gaussian random walk observed with unit noise; the minimal
    /// Markov target for engine tests.
    struct ToyModel {
        t_len: usize,
        log_nu: f64,
    }

    impl ModelTarget for ToyModel {
        type Stat = ();

        fn dim_x(&self) -> usize {
            1
        }

        fn dim_y(&self) -> usize {
            1
        }

        fn horizon(&self) -> usize {
            self.t_len
        }

        fn sample_initial(&self, rng: &mut dyn Rng) -> DVector<f64> {
            use rand_distr::{Distribution, StandardNormal};
            DVector::from_element(1, StandardNormal.sample(rng))
        }

        fn initial_log_density(&self, x0: &DVector<f64>) -> f64 {
            scalar_normal_logpdf(x0[0], 0.0, 1.0)
        }

        fn init_stat(&self, x0: &DVector<f64>, obs: &Observations) -> ((), f64) {
            ((), scalar_normal_logpdf(x0[0], 0.0, 1.0) + scalar_normal_logpdf(obs.at(0)[0], x0[0], 1.0))
        }

        fn sample_transition(
            &self,
            _t: usize,
            x_prev: &DVector<f64>,
            _stat: &(),
            rng: &mut dyn Rng,
        ) -> DVector<f64> {
            use rand_distr::{Distribution, StandardNormal};
            let z: f64 = StandardNormal.sample(rng);
            DVector::from_element(1, x_prev[0] + z)
        }

        fn transition_log_density(&self, _t: usize, x_prev: &DVector<f64>, _stat: &(), x_t: &DVector<f64>) -> f64 {
            scalar_normal_logpdf(x_t[0], x_prev[0], 1.0)
        }

        fn extend_stat(
            &self,
            t: usize,
            x_prev: &DVector<f64>,
            _stat: &(),
            x_t: &DVector<f64>,
            obs: &Observations,
        ) -> ((), f64) {
            let trans = scalar_normal_logpdf(x_t[0], x_prev[0], 1.0);
            let lik = scalar_normal_logpdf(obs.at(t)[0], x_t[0], 1.0);
            ((), trans + lik)
        }

        fn log_adjustment(&self, _t: usize, _stat: &(), _obs: &Observations) -> f64 {
            self.log_nu
        }
    }

    fn scalar_normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
        let d = x - mean;
        -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
    }

    fn toy_obs(t_len: usize) -> Observations {
        Observations::new((0..t_len).map(|t| DVector::from_element(1, 0.3 * t as f64)).collect())
            .unwrap()
    }

    #[test]
    fn inverse_cdf_tie_goes_to_the_lower_index() {
        let dist = CategoricalDist::from_probs(vec![0.5, 0.0, 0.5]).unwrap();
        let mut rng = FixedRng { values: vec![raw_for_uniform(0.5)], at: 0 };
        assert_eq!(dist.sample(&mut rng), 0);
        let mut rng = FixedRng { values: vec![raw_for_uniform(0.500001)], at: 0 };
        assert_eq!(dist.sample(&mut rng), 2);
    }

    #[test]
    fn zero_probability_categories_are_never_drawn() {
        let dist = CategoricalDist::from_probs(vec![0.0, 1.0, 0.0]).unwrap();
        let mut rng = stream(1);
        for _ in 0..200 {
            assert_eq!(dist.sample(&mut rng), 1);
        }
        // u = 1 exactly must not fall off the support.
        let mut rng = FixedRng { values: vec![raw_for_uniform(1.0)], at: 0 };
        assert_eq!(dist.sample(&mut rng), 1);
    }

    #[test]
    fn batch_sampling_matches_sequential_sampling() {
        let dist = CategoricalDist::from_log_weights(&[-0.3, -1.2, 0.4, -2.0]).unwrap();
        let mut rng_a = stream(2);
        let mut rng_b = stream(2);
        let batch = dist.sample_many(100, &mut rng_a);
        let seq: Vec<usize> = (0..100).map(|_| dist.sample(&mut rng_b)).collect();
        assert_eq!(batch, seq);
    }

    #[test]
    fn batch_sampling_frequencies_match_probabilities() {
        let dist = CategoricalDist::from_probs(vec![0.2, 0.3, 0.5]).unwrap();
        let mut rng = stream(3);
        let n = 30_000;
        let draws = dist.sample_many(n, &mut rng);
        let mut counts = [0usize; 3];
        for d in draws {
            counts[d] += 1;
        }
        for (k, &p) in dist.probs().iter().enumerate() {
            let freq = counts[k] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * sigma, "category {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn categorical_rejects_bad_input() {
        assert!(CategoricalDist::from_probs(vec![]).is_err());
        assert!(CategoricalDist::from_probs(vec![0.0, 0.0]).is_err());
        assert!(CategoricalDist::from_probs(vec![-0.1, 1.1]).is_err());
        assert!(CategoricalDist::from_log_weights(&[f64::NEG_INFINITY; 3]).is_err());
    }

    #[test]
    fn effective_sample_size_extremes() {
        let n = 7;
        let equal = vec![-1.3; n];
        assert_relative_eq!(effective_sample_size(&equal).unwrap(), n as f64, max_relative = 1e-12);
        let mut onehot = vec![f64::NEG_INFINITY; n];
        onehot[3] = 2.0;
        assert_relative_eq!(effective_sample_size(&onehot).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn single_particle_normalizer_is_the_weight_sum() {
        let model = ToyModel { t_len: 6, log_nu: 0.0 };
        let obs = toy_obs(6);
        let mut rng = stream(4);
        let hist = run_smc(&model, &obs, 1, &mut rng).unwrap();
        let manual: f64 = (0..6).map(|t| hist.log_weights_at(t)[0]).sum();
        assert_relative_eq!(hist.log_normalizer(), manual, max_relative = 1e-12);
    }

    #[test]
    fn lineage_tracing_is_ancestor_consistent() {
        let model = ToyModel { t_len: 8, log_nu: 0.0 };
        let obs = toy_obs(8);
        let mut rng = stream(5);
        let hist = run_smc(&model, &obs, 6, &mut rng).unwrap();
        for f in 0..6 {
            let idx = hist.trace_indices(f);
            assert_eq!(idx.len(), 8);
            assert_eq!(idx[7], f);
            for t in 1..8 {
                assert_eq!(idx[t - 1], hist.ancestors_at(t)[idx[t]]);
            }
            let traj = hist.trace_lineage(f).unwrap();
            for t in 0..8 {
                assert_eq!(traj.state(t), hist.state(t, idx[t]));
            }
        }
    }

    #[test]
    fn constant_adjustment_multiplier_changes_nothing() {
        // A constant nu tilts every resampling probability equally and is
        // exactly compensated in the weights and the normalizer.
        let obs = toy_obs(10);
        let plain = ToyModel { t_len: 10, log_nu: 0.0 };
        let tilted = ToyModel { t_len: 10, log_nu: 3.0_f64.ln() };
        let mut rng_a = stream(6);
        let mut rng_b = stream(6);
        let h_plain = run_smc(&plain, &obs, 16, &mut rng_a).unwrap();
        let h_tilted = run_smc(&tilted, &obs, 16, &mut rng_b).unwrap();
        assert_relative_eq!(h_plain.log_normalizer(), h_tilted.log_normalizer(), max_relative = 1e-12);
        for t in 1..10 {
            assert_eq!(h_plain.ancestors_at(t), h_tilted.ancestors_at(t));
        }
    }

    #[test]
    fn collapse_is_reported_with_its_time_step() {
        struct DoomedModel {
            inner: ToyModel,
        }
        impl ModelTarget for DoomedModel {
            type Stat = ();
            fn dim_x(&self) -> usize {
                1
            }
            fn dim_y(&self) -> usize {
                1
            }
            fn horizon(&self) -> usize {
                self.inner.horizon()
            }
            fn sample_initial(&self, rng: &mut dyn Rng) -> DVector<f64> {
                self.inner.sample_initial(rng)
            }
            fn initial_log_density(&self, x0: &DVector<f64>) -> f64 {
                self.inner.initial_log_density(x0)
            }
            fn init_stat(&self, x0: &DVector<f64>, obs: &Observations) -> ((), f64) {
                self.inner.init_stat(x0, obs)
            }
            fn sample_transition(
                &self,
                t: usize,
                x_prev: &DVector<f64>,
                stat: &(),
                rng: &mut dyn Rng,
            ) -> DVector<f64> {
                self.inner.sample_transition(t, x_prev, stat, rng)
            }
            fn transition_log_density(&self, t: usize, x_prev: &DVector<f64>, stat: &(), x_t: &DVector<f64>) -> f64 {
                self.inner.transition_log_density(t, x_prev, stat, x_t)
            }
            fn extend_stat(
                &self,
                t: usize,
                _x_prev: &DVector<f64>,
                _stat: &(),
                _x_t: &DVector<f64>,
                _obs: &Observations,
            ) -> ((), f64) {
                // Zero target density everywhere from step 3 on.
                ((), if t >= 3 { f64::NEG_INFINITY } else { 0.0 })
            }
        }

        let model = DoomedModel { inner: ToyModel { t_len: 6, log_nu: 0.0 } };
        let obs = toy_obs(6);
        let mut rng = stream(7);
        match run_smc(&model, &obs, 4, &mut rng) {
            Err(Error::ParticleCollapse { t }) => assert_eq!(t, 3),
            other => panic!("expected collapse, got {other:?}"),
        }
    }

    #[test]
    fn smc_inputs_are_validated() {
        let model = ToyModel { t_len: 4, log_nu: 0.0 };
        let obs = toy_obs(4);
        let mut rng = stream(8);
        assert!(run_smc(&model, &obs, 0, &mut rng).is_err());
        let short = toy_obs(3);
        assert!(run_smc(&model, &short, 4, &mut rng).is_err());
    }
}
