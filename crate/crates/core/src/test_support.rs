//! Toy targets shared by unit tests across modules. Compiled only for tests.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{ModelTarget, Observations};

pub fn lognorm(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

pub fn obs_ramp(t_len: usize) -> Observations {
    Observations::new((0..t_len).map(|t| DVector::from_element(1, 0.1 * t as f64)).collect())
        .unwrap()
}

/// Markov scalar Gaussian random walk with unit transition noise and
/// observation variance `obs_var`, bootstrap proposal.
pub struct ScalarRw {
    pub t_len: usize,
    pub obs_var: f64,
}

impl ModelTarget for ScalarRw {
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
        DVector::from_element(1, StandardNormal.sample(rng))
    }

    fn initial_log_density(&self, x0: &DVector<f64>) -> f64 {
        lognorm(x0[0], 0.0, 1.0)
    }

    fn init_stat(&self, x0: &DVector<f64>, obs: &Observations) -> ((), f64) {
        ((), lognorm(x0[0], 0.0, 1.0) + lognorm(obs.at(0)[0], x0[0], self.obs_var))
    }

    fn sample_transition(
        &self,
        _t: usize,
        x_prev: &DVector<f64>,
        _stat: &(),
        rng: &mut dyn Rng,
    ) -> DVector<f64> {
        let z: f64 = StandardNormal.sample(rng);
        DVector::from_element(1, x_prev[0] + z)
    }

    fn transition_log_density(&self, _t: usize, x_prev: &DVector<f64>, _stat: &(), x_t: &DVector<f64>) -> f64 {
        lognorm(x_t[0], x_prev[0], 1.0)
    }

    fn extend_stat(
        &self,
        t: usize,
        x_prev: &DVector<f64>,
        _stat: &(),
        x_t: &DVector<f64>,
        obs: &Observations,
    ) -> ((), f64) {
        ((), lognorm(x_t[0], x_prev[0], 1.0) + lognorm(obs.at(t)[0], x_t[0], self.obs_var))
    }
}

/// Transition and likelihood ignore the past entirely, so backward factors
/// are particle-independent.
pub struct IidModel {
    pub t_len: usize,
}

impl ModelTarget for IidModel {
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
        DVector::from_element(1, StandardNormal.sample(rng))
    }

    fn initial_log_density(&self, x0: &DVector<f64>) -> f64 {
        lognorm(x0[0], 0.0, 1.0)
    }

    fn init_stat(&self, x0: &DVector<f64>, obs: &Observations) -> ((), f64) {
        ((), lognorm(x0[0], 0.0, 1.0) + lognorm(obs.at(0)[0], x0[0], 1.0))
    }

    fn sample_transition(
        &self,
        _t: usize,
        _x_prev: &DVector<f64>,
        _stat: &(),
        rng: &mut dyn Rng,
    ) -> DVector<f64> {
        DVector::from_element(1, StandardNormal.sample(rng))
    }

    fn transition_log_density(&self, _t: usize, _x_prev: &DVector<f64>, _stat: &(), x_t: &DVector<f64>) -> f64 {
        lognorm(x_t[0], 0.0, 1.0)
    }

    fn extend_stat(
        &self,
        t: usize,
        _x_prev: &DVector<f64>,
        _stat: &(),
        x_t: &DVector<f64>,
        obs: &Observations,
    ) -> ((), f64) {
        ((), lognorm(x_t[0], 0.0, 1.0) + lognorm(obs.at(t)[0], x_t[0], 1.0))
    }
}

/// Non-Markov scalar model: the transition mean is the running average of the
/// whole prefix, so every backward factor depends on the full path.
pub struct RunningMeanModel {
    pub t_len: usize,
}

/// (running sum, count).
#[derive(Clone)]
pub struct SumStat {
    pub sum: f64,
    pub count: usize,
}

impl RunningMeanModel {
    fn mean(stat: &SumStat) -> f64 {
        stat.sum / stat.count as f64
    }
}

impl ModelTarget for RunningMeanModel {
    type Stat = SumStat;

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
        DVector::from_element(1, StandardNormal.sample(rng))
    }

    fn initial_log_density(&self, x0: &DVector<f64>) -> f64 {
        lognorm(x0[0], 0.0, 1.0)
    }

    fn init_stat(&self, x0: &DVector<f64>, obs: &Observations) -> (SumStat, f64) {
        let lg = lognorm(x0[0], 0.0, 1.0) + lognorm(obs.at(0)[0], x0[0], 0.5);
        (SumStat { sum: x0[0], count: 1 }, lg)
    }

    fn sample_transition(
        &self,
        _t: usize,
        _x_prev: &DVector<f64>,
        stat: &SumStat,
        rng: &mut dyn Rng,
    ) -> DVector<f64> {
        let z: f64 = StandardNormal.sample(rng);
        DVector::from_element(1, Self::mean(stat) + z)
    }

    fn transition_log_density(
        &self,
        _t: usize,
        _x_prev: &DVector<f64>,
        stat: &SumStat,
        x_t: &DVector<f64>,
    ) -> f64 {
        lognorm(x_t[0], Self::mean(stat), 1.0)
    }

    fn extend_stat(
        &self,
        t: usize,
        _x_prev: &DVector<f64>,
        stat: &SumStat,
        x_t: &DVector<f64>,
        obs: &Observations,
    ) -> (SumStat, f64) {
        let inc = lognorm(x_t[0], Self::mean(stat), 1.0) + lognorm(obs.at(t)[0], x_t[0], 0.5);
        (SumStat { sum: stat.sum + x_t[0], count: stat.count + 1 }, inc)
    }
}
