//! Markov chain kernels on path space: conditional SMC with ancestor
//! sampling, backward-simulation smoothers, marginal Metropolis-Hastings, and
//! the chain drivers that tie them together.
//!
//! All kernels share one invariance structure: each leaves the smoothing
//! distribution (or the joint posterior over parameter and path) invariant,
//! so chains may be composed freely. The conditional sweep keeps the
//! reference path in fixed particle slots; ancestor sampling redraws the
//! reference's ancestry at every step against the truncated backward weights,
//! which is what breaks the path degeneracy of plain particle Gibbs.
//!
//! Randomness discipline: within one conditional sweep step the draw order is
//! fixed (free-slot ancestors as one batch, then the conditioned ancestor if
//! it is sampled, then free-slot proposals in slot order), so a seed pins the
//! whole iteration regardless of model or truncation settings.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::model::{
    log_gamma, ModelFamily, ModelTarget, Observations, ParameterState, Trajectory,
};
use crate::rng::{derive_stream, uniform_open_closed};
use crate::smc::{
    check_smc_inputs, run_smc, step_log_norm, CategoricalDist, ParticleFront, SmcHistory,
};
use crate::truncation::{backward_dist, TruncationConfig};

/// A reference path pinned to specific particle slots, one per time step.
///
/// The sweeps here always use the last slot, but the law of the kernel does
/// not depend on the labels, and arbitrary slot vectors are accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    trajectory: Trajectory,
    slots: Vec<usize>,
    n_particles: usize,
}

impl ReferencePath {
    pub fn new(trajectory: Trajectory, slots: Vec<usize>, n_particles: usize) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::validation("at least one particle is required"));
        }
        if slots.len() != trajectory.len() {
            return Err(Error::dimension(format!(
                "{} slots for a {}-step trajectory",
                slots.len(),
                trajectory.len()
            )));
        }
        if let Some(&bad) = slots.iter().find(|s| **s >= n_particles) {
            return Err(Error::validation(format!(
                "slot {bad} out of range for {n_particles} particles"
            )));
        }
        Ok(Self { trajectory, slots, n_particles })
    }

    /// Pin every step to the last slot, `N - 1`.
    pub fn with_last_slot(trajectory: Trajectory, n_particles: usize) -> Result<Self> {
        let slots = vec![n_particles.saturating_sub(1); trajectory.len()];
        Self::new(trajectory, slots, n_particles)
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }
}

/// How the conditioned particle's ancestor is chosen at each step.
#[derive(Debug, Clone, Copy)]
pub enum ConditionedAncestry<'a> {
    /// Redraw from the truncated backward weights (the ancestor-sampling
    /// kernel).
    AncestorSampling(&'a TruncationConfig),
    /// Keep the reference's own lineage (plain conditional SMC, used as the
    /// forward pass of backward-simulation kernels).
    Fixed,
}

/// Per-sweep counters: how often the sampled conditioned ancestor left the
/// reference lineage, and the truncation level of every backward-weight
/// evaluation (ancestor draws for the AS sweep, per-step draws for backward
/// passes).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepDiagnostics {
    pub ancestor_draws: usize,
    pub ancestor_moves: usize,
    pub levels: Vec<usize>,
}

impl SweepDiagnostics {
    fn absorb(&mut self, other: &SweepDiagnostics) {
        self.ancestor_draws += other.ancestor_draws;
        self.ancestor_moves += other.ancestor_moves;
        self.levels.extend_from_slice(&other.levels);
    }
}

/// A conditional sweep's history plus its diagnostics.
#[derive(Debug)]
pub struct CsmcOutput<S> {
    pub history: SmcHistory<S>,
    pub diagnostics: SweepDiagnostics,
}

/// Conditional SMC sweep: slot `b_t` holds the reference state at every `t`,
/// everything else is sampled as in the unconditional sweep. With
/// [`ConditionedAncestry::AncestorSampling`] the conditioned particle's
/// ancestor is redrawn from the backward weights of the previous front
/// against the remaining reference suffix.
pub fn run_csmc_as<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    reference: &ReferencePath,
    ancestry: ConditionedAncestry<'_>,
    rng: &mut dyn Rng,
) -> Result<CsmcOutput<M::Stat>> {
    let n = reference.n_particles();
    let t_len = check_smc_inputs(model, obs, n)?;
    if reference.trajectory().len() != t_len {
        return Err(Error::dimension(format!(
            "reference length {} vs horizon {t_len}",
            reference.trajectory().len()
        )));
    }
    if reference.trajectory().dim() != model.dim_x() {
        return Err(Error::dimension(format!(
            "reference dim {} vs model dim_x {}",
            reference.trajectory().dim(),
            model.dim_x()
        )));
    }
    if let ConditionedAncestry::AncestorSampling(config) = ancestry {
        config.validate()?;
    }

    let mut states: Vec<Vec<DVector<f64>>> = Vec::with_capacity(t_len);
    let mut stats: Vec<Vec<M::Stat>> = Vec::with_capacity(t_len);
    let mut log_weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    let mut log_norm_increments = Vec::with_capacity(t_len);
    let mut diagnostics = SweepDiagnostics::default();

    let slot0 = reference.slots()[0];
    let mut xs = Vec::with_capacity(n);
    let mut ss = Vec::with_capacity(n);
    let mut lw = Vec::with_capacity(n);
    for i in 0..n {
        let x = if i == slot0 {
            reference.trajectory().state(0).clone()
        } else {
            model.sample_initial(rng)
        };
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
        let slot_prev = reference.slots()[t - 1];
        let slot_cur = reference.slots()[t];
        let prev_w = &log_weights[t - 1];
        let log_nu: Vec<f64> =
            (0..n).map(|i| model.log_adjustment(t - 1, &stats[t - 1][i], obs)).collect();
        let tilted: Vec<f64> = prev_w.iter().zip(&log_nu).map(|(w, nu)| w + nu).collect();
        let dist = CategoricalDist::from_log_weights(&tilted)
            .map_err(|_| Error::ParticleCollapse { t: t - 1 })?;
        let free_ancestors = dist.sample_many(n - 1, rng);

        let conditioned_ancestor = match ancestry {
            ConditionedAncestry::Fixed => slot_prev,
            ConditionedAncestry::AncestorSampling(config) => {
                let front = ParticleFront {
                    t: t - 1,
                    states: &states[t - 1],
                    stats: &stats[t - 1],
                    log_weights: prev_w,
                };
                let suffix = &reference.trajectory().states()[t..];
                let (bdist, trace) = backward_dist(model, obs, &front, suffix, config)?;
                let a = bdist.sample(rng);
                diagnostics.ancestor_draws += 1;
                if a != slot_prev {
                    diagnostics.ancestor_moves += 1;
                }
                diagnostics.levels.push(trace.level);
                a
            }
        };

        let mut anc = vec![0usize; n];
        let mut free_iter = free_ancestors.into_iter();
        for (i, slot) in anc.iter_mut().enumerate() {
            *slot = if i == slot_cur {
                conditioned_ancestor
            } else {
                free_iter.next().expect("n - 1 free ancestors")
            };
        }

        let mut xs = Vec::with_capacity(n);
        let mut ss = Vec::with_capacity(n);
        let mut lw = Vec::with_capacity(n);
        for (i, &a) in anc.iter().enumerate() {
            let prev_x = &states[t - 1][a];
            let prev_s = &stats[t - 1][a];
            let x = if i == slot_cur {
                reference.trajectory().state(t).clone()
            } else {
                model.sample_transition(t, prev_x, prev_s, rng)
            };
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

    let history =
        SmcHistory::from_parts(states, stats, log_weights, ancestors, log_norm_increments);
    Ok(CsmcOutput { history, diagnostics })
}

/// Backward sampling distribution at time `front.t` against a reference
/// suffix, with the truncation level actually used. Delegates the factor
/// evaluation to the truncation machinery.
pub fn backward_sampling_dist<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    front: &ParticleFront<'_, M::Stat>,
    suffix: &[DVector<f64>],
    truncation: &TruncationConfig,
) -> Result<(CategoricalDist, usize)> {
    let (dist, trace) = backward_dist(model, obs, front, suffix, truncation)?;
    Ok((dist, trace.level))
}

/// Draw index `k` from the final-time weights; degenerate weights there are a
/// particle collapse at the last step.
fn sample_final_index<S>(history: &SmcHistory<S>, rng: &mut dyn Rng) -> Result<usize> {
    let t_last = history.len() - 1;
    let dist = history.dist_at(t_last).map_err(|_| Error::ParticleCollapse { t: t_last })?;
    Ok(dist.sample(rng))
}

/// One backward-simulation pass over a stored history: draw the final index
/// from the forward weights, then walk backwards drawing each index from the
/// backward weights against the already-composed tail.
///
/// Returns the composed trajectory and the truncation level used at each
/// draw time `t = 0..T-2` (the final-time draw has no level).
pub fn backward_pass<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    history: &SmcHistory<M::Stat>,
    truncation: &TruncationConfig,
    rng: &mut dyn Rng,
) -> Result<(Trajectory, Vec<usize>)> {
    let t_len = history.len();
    let k = sample_final_index(history, rng)?;
    let mut tail: Vec<DVector<f64>> = vec![history.state(t_len - 1, k).clone()];
    let mut levels = vec![0usize; t_len.saturating_sub(1)];
    for t in (0..t_len - 1).rev() {
        let front = history.front_at(t);
        let (dist, level) = backward_sampling_dist(model, obs, &front, &tail, truncation)?;
        let i = dist.sample(rng);
        levels[t] = level;
        tail.insert(0, history.state(t, i).clone());
    }
    Ok((Trajectory::new(tail)?, levels))
}

/// One particle Gibbs iteration with ancestor sampling: conditional sweep,
/// then a new reference drawn from the final weights.
pub fn pgas_iteration<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    n_particles: usize,
    reference: &Trajectory,
    truncation: &TruncationConfig,
    rng: &mut dyn Rng,
) -> Result<(Trajectory, SweepDiagnostics)> {
    let reference = ReferencePath::with_last_slot(reference.clone(), n_particles)?;
    let out = run_csmc_as(
        model,
        obs,
        &reference,
        ConditionedAncestry::AncestorSampling(truncation),
        rng,
    )?;
    let k = sample_final_index(&out.history, rng)?;
    Ok((out.history.trace_lineage(k)?, out.diagnostics))
}

/// One particle Gibbs iteration with backward simulation: plain conditional
/// sweep (the reference keeps its own ancestry), then a full backward pass.
pub fn pgbs_iteration<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    n_particles: usize,
    reference: &Trajectory,
    truncation: &TruncationConfig,
    rng: &mut dyn Rng,
) -> Result<(Trajectory, SweepDiagnostics)> {
    let reference = ReferencePath::with_last_slot(reference.clone(), n_particles)?;
    let out = run_csmc_as(model, obs, &reference, ConditionedAncestry::Fixed, rng)?;
    let (path, levels) = backward_pass(model, obs, &out.history, truncation, rng)?;
    let mut diagnostics = out.diagnostics;
    diagnostics.levels = levels;
    Ok((path, diagnostics))
}

/// Forward filter/backward simulator: one unconditional sweep, then
/// `m_draws` independent backward passes.
pub fn ffbsi<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    n_particles: usize,
    m_draws: usize,
    truncation: &TruncationConfig,
    rng: &mut dyn Rng,
) -> Result<(Vec<Trajectory>, SweepDiagnostics)> {
    if m_draws == 0 {
        return Err(Error::validation("at least one backward draw is required"));
    }
    let history = run_smc(model, obs, n_particles, rng)?;
    let mut paths = Vec::with_capacity(m_draws);
    let mut diagnostics = SweepDiagnostics::default();
    for _ in 0..m_draws {
        let (path, levels) = backward_pass(model, obs, &history, truncation, rng)?;
        diagnostics.levels.extend_from_slice(&levels);
        paths.push(path);
    }
    Ok((paths, diagnostics))
}

/// Metropolis-Hastings update of the parameter given a fixed reference path,
/// targeting `p(theta) * gamma_T^theta(reference)` with a symmetric Gaussian
/// random-walk proposal of componentwise standard deviation `proposal_sd`.
///
/// Returns the (possibly unchanged) parameter state and whether the proposal
/// was accepted.
pub fn mh_parameter_update<F: ModelFamily>(
    family: &F,
    obs: &Observations,
    reference: &Trajectory,
    current: &ParameterState,
    proposal_sd: f64,
    rng: &mut dyn Rng,
) -> Result<(ParameterState, bool)> {
    if !(proposal_sd > 0.0) {
        return Err(Error::validation(format!(
            "proposal standard deviation {proposal_sd} must be positive"
        )));
    }
    let proposed_theta = current
        .theta
        .map(|v| v + proposal_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
    let proposed_prior = family.log_prior(&proposed_theta);
    if proposed_prior == f64::NEG_INFINITY {
        return Ok((current.clone(), false));
    }
    let current_model = family.build(&current.theta)?;
    let proposed_model = family.build(&proposed_theta)?;
    let current_lg = log_gamma(&current_model, reference, obs)?;
    let proposed_lg = log_gamma(&proposed_model, reference, obs)?;
    let log_ratio = proposed_lg + proposed_prior - current_lg - current.log_prior;
    if uniform_open_closed(rng).ln() < log_ratio {
        Ok((ParameterState::new(proposed_theta, proposed_prior)?, true))
    } else {
        Ok((current.clone(), false))
    }
}

/// State of a marginal Metropolis-Hastings chain: parameter, the normalizer
/// estimate that came with it, and a stored path lineage.
#[derive(Debug, Clone)]
pub struct PmmhState {
    pub param: ParameterState,
    pub log_z: f64,
    pub reference: Trajectory,
}

/// Initialize a marginal MH chain by one unconditional sweep under `theta0`.
pub fn pmmh_init<F: ModelFamily>(
    family: &F,
    obs: &Observations,
    theta0: &DVector<f64>,
    n_particles: usize,
    rng: &mut dyn Rng,
) -> Result<PmmhState> {
    let log_prior = family.log_prior(theta0);
    if log_prior == f64::NEG_INFINITY {
        return Err(Error::validation("initial parameter has zero prior density"));
    }
    let model = family.build(theta0)?;
    let history = run_smc(&model, obs, n_particles, rng)?;
    let k = sample_final_index(&history, rng)?;
    Ok(PmmhState {
        param: ParameterState::new(theta0.clone(), log_prior)?,
        log_z: history.log_normalizer(),
        reference: history.trace_lineage(k)?,
    })
}

/// One marginal MH iteration: propose `theta'` by a symmetric Gaussian random
/// walk, estimate its normalizer with a fresh sweep, and accept with
/// probability `min(1, exp(log_z' + log p(theta') - log_z - log p(theta)))`.
/// On acceptance the stored path is a lineage drawn from the new sweep.
pub fn pmmh_iteration<F: ModelFamily>(
    family: &F,
    obs: &Observations,
    n_particles: usize,
    state: &mut PmmhState,
    proposal_sd: f64,
    rng: &mut dyn Rng,
) -> Result<bool> {
    if !(proposal_sd > 0.0) {
        return Err(Error::validation(format!(
            "proposal standard deviation {proposal_sd} must be positive"
        )));
    }
    let proposed_theta = state
        .param
        .theta
        .map(|v| v + proposal_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
    let proposed_prior = family.log_prior(&proposed_theta);
    if proposed_prior == f64::NEG_INFINITY {
        return Ok(false);
    }
    let model = family.build(&proposed_theta)?;
    let history = run_smc(&model, obs, n_particles, rng)?;
    let proposed_log_z = history.log_normalizer();
    let log_ratio = proposed_log_z + proposed_prior - state.log_z - state.param.log_prior;
    if uniform_open_closed(rng).ln() < log_ratio {
        let k = sample_final_index(&history, rng)?;
        state.reference = history.trace_lineage(k)?;
        state.param = ParameterState::new(proposed_theta, proposed_prior)?;
        state.log_z = proposed_log_z;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Which particle Gibbs kernel a chain iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Ancestor sampling inside the conditional sweep.
    Pgas,
    /// Plain conditional sweep plus a backward-simulation pass.
    Pgbs,
}

/// Settings for one particle Gibbs chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub kernel: KernelKind,
    pub n_particles: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub truncation: TruncationConfig,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::validation("at least one particle is required"));
        }
        if self.iterations == 0 {
            return Err(Error::validation("at least one iteration is required"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::validation(format!(
                "burn-in {} must be smaller than the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        self.truncation.validate()
    }
}

/// Aggregated counters over a whole chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainDiagnostics {
    pub ancestor_draws: u64,
    pub ancestor_moves: u64,
    pub level_sum: u64,
    pub level_count: u64,
    pub param_updates: u64,
    pub param_accepts: u64,
}

impl ChainDiagnostics {
    fn absorb_sweep(&mut self, d: &SweepDiagnostics) {
        self.ancestor_draws += d.ancestor_draws as u64;
        self.ancestor_moves += d.ancestor_moves as u64;
        self.level_sum += d.levels.iter().map(|&l| l as u64).sum::<u64>();
        self.level_count += d.levels.len() as u64;
    }

    /// Fraction of conditioned-ancestor draws that left the reference
    /// lineage.
    pub fn ancestor_move_rate(&self) -> f64 {
        if self.ancestor_draws == 0 {
            0.0
        } else {
            self.ancestor_moves as f64 / self.ancestor_draws as f64
        }
    }

    /// Mean truncation level over every backward-weight evaluation.
    pub fn mean_level(&self) -> f64 {
        if self.level_count == 0 {
            0.0
        } else {
            self.level_sum as f64 / self.level_count as f64
        }
    }

    pub fn param_accept_rate(&self) -> f64 {
        if self.param_updates == 0 {
            0.0
        } else {
            self.param_accepts as f64 / self.param_updates as f64
        }
    }
}

/// Post-burn-in samples of one chain. Paths are stored flattened
/// (`Trajectory::flatten` layout); `thetas` is empty unless the chain updates
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub dim_x: usize,
    pub t_len: usize,
    /// Absolute iteration index of the first stored sample.
    pub first_iteration: usize,
    pub paths: Vec<Vec<f64>>,
    pub thetas: Vec<Vec<f64>>,
    /// Mean truncation level within each stored iteration.
    pub mean_levels: Vec<f64>,
    pub diagnostics: ChainDiagnostics,
}

impl SampleStore {
    fn new(dim_x: usize, t_len: usize, first_iteration: usize) -> Self {
        Self {
            dim_x,
            t_len,
            first_iteration,
            paths: Vec::new(),
            thetas: Vec::new(),
            mean_levels: Vec::new(),
            diagnostics: ChainDiagnostics::default(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.paths.len()
    }

    /// Stored sample `r` as a trajectory.
    pub fn path(&self, r: usize) -> Trajectory {
        Trajectory::from_flat(&self.paths[r], self.dim_x).expect("stored paths are valid")
    }
}

fn mean_of(levels: &[usize]) -> f64 {
    if levels.is_empty() {
        0.0
    } else {
        levels.iter().map(|&l| l as f64).sum::<f64>() / levels.len() as f64
    }
}

/// Initialize a reference path by an unconditional sweep plus a final-weight
/// lineage draw.
pub fn init_reference<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    n_particles: usize,
    rng: &mut dyn Rng,
) -> Result<Trajectory> {
    let history = run_smc(model, obs, n_particles, rng)?;
    let k = sample_final_index(&history, rng)?;
    history.trace_lineage(k)
}

/// Run one particle Gibbs chain with a fixed model, storing every post-burn
/// iteration's path. Fully determined by `seed`.
pub fn run_chain<M: ModelTarget>(
    model: &M,
    obs: &Observations,
    config: &ChainConfig,
    seed: u64,
) -> Result<SampleStore> {
    config.validate()?;
    let mut rng = derive_stream(seed, 0);
    let mut reference = init_reference(model, obs, config.n_particles, &mut rng)?;
    let mut store = SampleStore::new(model.dim_x(), model.horizon(), config.burn_in);
    for r in 0..config.iterations {
        let (next, diag) = match config.kernel {
            KernelKind::Pgas => pgas_iteration(
                model,
                obs,
                config.n_particles,
                &reference,
                &config.truncation,
                &mut rng,
            )?,
            KernelKind::Pgbs => pgbs_iteration(
                model,
                obs,
                config.n_particles,
                &reference,
                &config.truncation,
                &mut rng,
            )?,
        };
        reference = next;
        store.diagnostics.absorb_sweep(&diag);
        if r >= config.burn_in {
            store.paths.push(reference.flatten());
            store.mean_levels.push(mean_of(&diag.levels));
        }
    }
    Ok(store)
}

/// Run a particle Gibbs chain that alternates a Metropolis-Hastings parameter
/// update (given the reference path) with a conditional sweep (given the
/// parameter). Stores paths and parameter samples.
pub fn run_param_chain<F: ModelFamily>(
    family: &F,
    obs: &Observations,
    theta0: &DVector<f64>,
    proposal_sd: f64,
    config: &ChainConfig,
    seed: u64,
) -> Result<SampleStore> {
    config.validate()?;
    let log_prior0 = family.log_prior(theta0);
    if log_prior0 == f64::NEG_INFINITY {
        return Err(Error::validation("initial parameter has zero prior density"));
    }
    let mut rng = derive_stream(seed, 0);
    let mut param = ParameterState::new(theta0.clone(), log_prior0)?;
    let mut model = family.build(&param.theta)?;
    let mut reference = init_reference(&model, obs, config.n_particles, &mut rng)?;
    let mut store = SampleStore::new(model.dim_x(), model.horizon(), config.burn_in);

    for r in 0..config.iterations {
        let (next_param, accepted) =
            mh_parameter_update(family, obs, &reference, &param, proposal_sd, &mut rng)?;
        store.diagnostics.param_updates += 1;
        if accepted {
            model = family.build(&next_param.theta)?;
            store.diagnostics.param_accepts += 1;
        }
        param = next_param;

        let (next, diag) = match config.kernel {
            KernelKind::Pgas => pgas_iteration(
                &model,
                obs,
                config.n_particles,
                &reference,
                &config.truncation,
                &mut rng,
            )?,
            KernelKind::Pgbs => pgbs_iteration(
                &model,
                obs,
                config.n_particles,
                &reference,
                &config.truncation,
                &mut rng,
            )?,
        };
        reference = next;
        store.diagnostics.absorb_sweep(&diag);
        if r >= config.burn_in {
            store.paths.push(reference.flatten());
            store.thetas.push(param.theta.iter().cloned().collect());
            store.mean_levels.push(mean_of(&diag.levels));
        }
    }
    Ok(store)
}

/// Run a marginal Metropolis-Hastings chain over the parameter, storing
/// parameter samples and the current path lineage each iteration.
pub fn run_pmmh_chain<F: ModelFamily>(
    family: &F,
    obs: &Observations,
    theta0: &DVector<f64>,
    n_particles: usize,
    proposal_sd: f64,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SampleStore> {
    if iterations == 0 || burn_in >= iterations {
        return Err(Error::validation(format!(
            "need burn-in {burn_in} < iterations {iterations} and at least one iteration"
        )));
    }
    let mut rng = derive_stream(seed, 0);
    let mut state = pmmh_init(family, obs, theta0, n_particles, &mut rng)?;
    let mut store =
        SampleStore::new(state.reference.dim(), state.reference.len(), burn_in);
    for r in 0..iterations {
        let accepted = pmmh_iteration(family, obs, n_particles, &mut state, proposal_sd, &mut rng)?;
        store.diagnostics.param_updates += 1;
        if accepted {
            store.diagnostics.param_accepts += 1;
        }
        if r >= burn_in {
            store.paths.push(state.reference.flatten());
            store.thetas.push(state.param.theta.iter().cloned().collect());
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::prefix_stat;
    use crate::rng::stream;
    use crate::test_support::{obs_ramp, RunningMeanModel, ScalarRw};
    use crate::truncation::tv_distance;
    use approx::assert_relative_eq;

    #[test]
    fn conditioning_pins_the_reference_in_its_slots() {
        let t_len = 6;
        let model = RunningMeanModel { t_len };
        let obs = obs_ramp(t_len);
        let mut rng = stream(31);
        let reference = Trajectory::new(
            (0..t_len).map(|t| DVector::from_element(1, 0.2 * t as f64 - 0.3)).collect(),
        )
        .unwrap();

        // Mixed slot labels: pinning must hold wherever the slots point.
        let slots = vec![0, 3, 1, 3, 2, 0];
        let pinned = ReferencePath::new(reference.clone(), slots.clone(), 4).unwrap();
        let config = TruncationConfig::default_adaptive();
        let out = run_csmc_as(
            &model,
            &obs,
            &pinned,
            ConditionedAncestry::AncestorSampling(&config),
            &mut rng,
        )
        .unwrap();
        for t in 0..t_len {
            assert_eq!(out.history.state(t, slots[t]), reference.state(t), "time {t}");
        }
        assert_eq!(out.diagnostics.ancestor_draws, t_len - 1);
        assert_eq!(out.diagnostics.levels.len(), t_len - 1);
    }

    #[test]
    fn single_particle_kernels_are_the_identity() {
        let t_len = 5;
        let model = RunningMeanModel { t_len };
        let obs = obs_ramp(t_len);
        let reference = Trajectory::new(
            (0..t_len).map(|t| DVector::from_element(1, 0.4 - 0.1 * t as f64)).collect(),
        )
        .unwrap();
        let config = TruncationConfig::Untruncated;

        let mut rng = stream(32);
        let (pgas_path, _) =
            pgas_iteration(&model, &obs, 1, &reference, &config, &mut rng).unwrap();
        assert_eq!(pgas_path, reference);

        let (pgbs_path, _) =
            pgbs_iteration(&model, &obs, 1, &reference, &config, &mut rng).unwrap();
        assert_eq!(pgbs_path, reference);
    }

    #[test]
    fn markov_models_need_only_one_backward_factor() {
        // For a Markov target the factors beyond s = 1 are common across
        // particles and cancel, so the level-1 distribution equals the
        // untruncated one.
        let t_len = 10;
        let model = ScalarRw { t_len, obs_var: 0.6 };
        let obs = obs_ramp(t_len);
        let mut rng = stream(33);
        let history = run_smc(&model, &obs, 6, &mut rng).unwrap();

        let t = 4;
        let reference = history.trace_lineage(2).unwrap();
        let suffix = &reference.states()[t + 1..];
        let front = history.front_at(t);
        let (one, _) = backward_sampling_dist(
            &model,
            &obs,
            &front,
            suffix,
            &TruncationConfig::Fixed { level: 1 },
        )
        .unwrap();
        let (full, level) =
            backward_sampling_dist(&model, &obs, &front, suffix, &TruncationConfig::Untruncated)
                .unwrap();
        assert_eq!(level, suffix.len());
        let tv = tv_distance(one.probs(), full.probs()).unwrap();
        assert!(tv < 1e-12, "tv = {tv}");
    }

    #[test]
    fn conditioned_weight_uses_the_sampled_ancestor() {
        // Reconstruct the conditioned slot's weight from its recorded
        // ancestor; it must follow the same formula as every other particle.
        let t_len = 7;
        let model = RunningMeanModel { t_len };
        let obs = obs_ramp(t_len);
        let mut rng = stream(34);
        let reference = Trajectory::new(
            (0..t_len).map(|t| DVector::from_element(1, (t as f64 * 0.7).sin())).collect(),
        )
        .unwrap();
        let pinned = ReferencePath::with_last_slot(reference.clone(), 4).unwrap();
        let config = TruncationConfig::default_adaptive();
        let out = run_csmc_as(
            &model,
            &obs,
            &pinned,
            ConditionedAncestry::AncestorSampling(&config),
            &mut rng,
        )
        .unwrap();
        let n = 4;
        for t in 1..t_len {
            let a = out.history.ancestors_at(t)[n - 1];
            let prev_x = out.history.state(t - 1, a);
            // Rebuild the ancestor's prefix statistic from its lineage.
            let lineage_prefix = {
                let idx = out.history.trace_indices_at(t - 1, a);
                Trajectory::new(
                    idx.iter()
                        .enumerate()
                        .map(|(s, &i)| out.history.state(s, i).clone())
                        .collect(),
                )
                .unwrap()
            };
            let (stat, _) = prefix_stat(&model, &lineage_prefix, &obs).unwrap();
            let x_t = reference.state(t);
            let (_, inc) = model.extend_stat(t, prev_x, &stat, x_t, &obs);
            let expected = inc - model.transition_log_density(t, prev_x, &stat, x_t);
            assert_relative_eq!(
                out.history.log_weights_at(t)[n - 1],
                expected,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn chain_driver_respects_burn_in_and_seed() {
        let t_len = 6;
        let model = ScalarRw { t_len, obs_var: 1.0 };
        let obs = obs_ramp(t_len);
        let config = ChainConfig {
            kernel: KernelKind::Pgas,
            n_particles: 4,
            iterations: 9,
            burn_in: 8,
            truncation: TruncationConfig::Fixed { level: 1 },
        };
        let store = run_chain(&model, &obs, &config, 99).unwrap();
        assert_eq!(store.n_samples(), 1);
        assert_eq!(store.first_iteration, 8);
        assert_eq!(store.path(0).len(), t_len);

        let again = run_chain(&model, &obs, &config, 99).unwrap();
        assert_eq!(store, again);
        let other = run_chain(&model, &obs, &config, 100).unwrap();
        assert_ne!(store.paths, other.paths);
    }

    #[test]
    fn chain_config_is_validated() {
        let bad_burn = ChainConfig {
            kernel: KernelKind::Pgbs,
            n_particles: 3,
            iterations: 5,
            burn_in: 5,
            truncation: TruncationConfig::Untruncated,
        };
        assert!(bad_burn.validate().is_err());
        let bad_trunc = ChainConfig {
            kernel: KernelKind::Pgas,
            n_particles: 3,
            iterations: 5,
            burn_in: 1,
            truncation: TruncationConfig::Fixed { level: 0 },
        };
        assert!(bad_trunc.validate().is_err());
    }

    #[test]
    fn parameter_update_rejects_zero_prior_support() {
        struct PositiveMeanFamily {
            t_len: usize,
        }
        impl ModelFamily for PositiveMeanFamily {
            type Model = ScalarRw;
            fn build(&self, _theta: &DVector<f64>) -> crate::Result<ScalarRw> {
                Ok(ScalarRw { t_len: self.t_len, obs_var: 1.0 })
            }
            fn log_prior(&self, theta: &DVector<f64>) -> f64 {
                if theta[0] > 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
        let family = PositiveMeanFamily { t_len: 4 };
        let obs = obs_ramp(4);
        let reference =
            Trajectory::new((0..4).map(|_| DVector::from_element(1, 0.1)).collect()).unwrap();
        // Start barely inside the support with a tiny step: proposals that
        // cross zero must always be rejected.
        let current = ParameterState::new(DVector::from_element(1, 1e-12), 0.0).unwrap();
        let mut rng = stream(35);
        let mut rejected_any = false;
        let mut state = current.clone();
        for _ in 0..50 {
            let (next, accepted) =
                mh_parameter_update(&family, &obs, &reference, &state, 5.0, &mut rng).unwrap();
            if !accepted {
                rejected_any = true;
            }
            assert!(next.theta[0] > 0.0);
            state = next;
        }
        assert!(rejected_any);
        assert!(
            mh_parameter_update(&family, &obs, &reference, &state, 0.0, &mut rng).is_err()
        );
    }

    #[test]
    fn pmmh_requires_a_positive_proposal_sd() {
        struct FlatFamily {
            t_len: usize,
        }
        impl ModelFamily for FlatFamily {
            type Model = ScalarRw;
            fn build(&self, _theta: &DVector<f64>) -> crate::Result<ScalarRw> {
                Ok(ScalarRw { t_len: self.t_len, obs_var: 1.0 })
            }
            fn log_prior(&self, _theta: &DVector<f64>) -> f64 {
                0.0
            }
        }
        let family = FlatFamily { t_len: 4 };
        let obs = obs_ramp(4);
        let mut rng = stream(36);
        let mut state = pmmh_init(&family, &obs, &DVector::zeros(1), 5, &mut rng).unwrap();
        assert!(pmmh_iteration(&family, &obs, 5, &mut state, 0.0, &mut rng).is_err());
        // A valid step runs and keeps the state well-formed.
        let _ = pmmh_iteration(&family, &obs, 5, &mut state, 0.5, &mut rng).unwrap();
        assert_eq!(state.reference.len(), 4);
        assert!(state.log_z.is_finite());
    }
}
