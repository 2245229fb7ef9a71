//! Exact inference for linear-Gaussian state-space models.
//!
//! The model is
//!
//! ```text
//! x_0 ~ N(mu0, sigma0)
//! x_t = A x_{t-1} + G w_t,   w_t ~ N(0, Q)
//! y_t = C x_t     + e_t,     e_t ~ N(0, R)
//! ```
//!
//! with `G` allowed to be rank deficient (fewer noise channels than states).
//! Besides the Kalman filter and fixed-interval smoother this module provides
//! the *conditional* filter step used by marginalized targets: given a path
//! of one block of the state, it propagates the Gaussian belief over the
//! complementary block and returns the two predictive log densities that make
//! up the target increment. Covariance updates use the Joseph form throughout
//! to keep the matrices symmetric positive semidefinite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{
    cholesky_psd, mvn_logpdf_prefactored, sample_mvn_psd, symmetrize,
};
use crate::model::{Observations, Trajectory};

/// Gaussian in moment form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dimension(format!(
                "covariance {}x{} vs mean length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Linear-Gaussian state-space model. Validated at construction; see the
/// module docs for the generative equations.
#[derive(Debug, Clone, PartialEq)]
pub struct Lgssm {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    mu0: DVector<f64>,
    sigma0: DMatrix<f64>,
}

impl Lgssm {
    pub fn new(
        a: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        mu0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::dimension(format!("A must be square and nonempty, got {}x{}", a.nrows(), a.ncols())));
        }
        let dn = g.ncols();
        if g.nrows() != d {
            return Err(Error::dimension(format!("G has {} rows, expected {d}", g.nrows())));
        }
        if q.nrows() != dn || q.ncols() != dn {
            return Err(Error::dimension(format!("Q must be {dn}x{dn}, got {}x{}", q.nrows(), q.ncols())));
        }
        let dy = c.nrows();
        if c.ncols() != d {
            return Err(Error::dimension(format!("C has {} columns, expected {d}", c.ncols())));
        }
        if r.nrows() != dy || r.ncols() != dy {
            return Err(Error::dimension(format!("R must be {dy}x{dy}, got {}x{}", r.nrows(), r.ncols())));
        }
        if mu0.len() != d || sigma0.nrows() != d || sigma0.ncols() != d {
            return Err(Error::dimension("prior dimensions do not match the state dimension".into()));
        }
        for (name, m) in [("A", &a), ("G", &g), ("C", &c), ("Q", &q), ("R", &r), ("Sigma0", &sigma0)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("matrix {name}")));
            }
        }
        if mu0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mu0".into()));
        }
        for (name, m) in [("Q", &q), ("R", &r), ("Sigma0", &sigma0)] {
            if (m - m.transpose()).amax() > 1e-10 * (1.0 + m.amax()) {
                return Err(Error::validation(format!("{name} is not symmetric")));
            }
        }
        Ok(Self { a, g, c, q, r, mu0, sigma0 })
    }

    pub fn dim_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim_noise(&self) -> usize {
        self.g.ncols()
    }

    pub fn dim_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    /// Process noise covariance in state coordinates, `G Q G'`.
    pub fn noise_cov(&self) -> DMatrix<f64> {
        &self.g * &self.q * self.g.transpose()
    }

    /// Change of state basis `x -> U' x` for an orthogonal `U` whose columns
    /// express the new coordinates.
    pub fn rotate(&self, u: &DMatrix<f64>) -> Result<Lgssm> {
        let d = self.dim_x();
        if u.nrows() != d || u.ncols() != d {
            return Err(Error::dimension(format!("U must be {d}x{d}")));
        }
        if ((u.transpose() * u) - DMatrix::identity(d, d)).amax() > 1e-10 {
            return Err(Error::validation("U is not orthogonal".into()));
        }
        let ut = u.transpose();
        Lgssm::new(
            &ut * &self.a * u,
            &ut * &self.g,
            &self.c * u,
            self.q.clone(),
            self.r.clone(),
            &ut * &self.mu0,
            symmetrize(&(&ut * &self.sigma0 * u)),
        )
    }

    /// Fixed point of `P = A P A' + G Q G'`; requires a stable `A`.
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>> {
        stationary_covariance_of(&self.a, &self.noise_cov())
    }

    /// Draw a state path and matching observations from the generative model.
    pub fn simulate(&self, t_len: usize, rng: &mut dyn Rng) -> Result<(Trajectory, Observations)> {
        if t_len == 0 {
            return Err(Error::validation("simulation horizon must be positive"));
        }
        let mut xs = Vec::with_capacity(t_len);
        let mut ys = Vec::with_capacity(t_len);
        let mut x = sample_mvn_psd(&self.mu0, &self.sigma0, rng)?;
        let zero_noise = DVector::zeros(self.dim_noise());
        let zero_obs = DVector::zeros(self.dim_y());
        for _ in 0..t_len {
            let e = sample_mvn_psd(&zero_obs, &self.r, rng)?;
            ys.push(&self.c * &x + e);
            xs.push(x.clone());
            let w = sample_mvn_psd(&zero_noise, &self.q, rng)?;
            x = &self.a * &x + &self.g * w;
        }
        Ok((Trajectory::new(xs)?, Observations::new(ys)?))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&LgssmJson::from(self)).expect("serializing a finite model cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: LgssmJson = serde_json::from_str(text)?;
        raw.try_into()
    }
}

/// Row-major matrix payload for the JSON interchange format.
#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixJson {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::dimension(format!(
                "matrix payload has {} entries for shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct LgssmJson {
    a: MatrixJson,
    g: MatrixJson,
    c: MatrixJson,
    q: MatrixJson,
    r: MatrixJson,
    mu0: Vec<f64>,
    sigma0: MatrixJson,
}

impl From<&Lgssm> for LgssmJson {
    fn from(m: &Lgssm) -> Self {
        Self {
            a: MatrixJson::from_matrix(&m.a),
            g: MatrixJson::from_matrix(&m.g),
            c: MatrixJson::from_matrix(&m.c),
            q: MatrixJson::from_matrix(&m.q),
            r: MatrixJson::from_matrix(&m.r),
            mu0: m.mu0.iter().cloned().collect(),
            sigma0: MatrixJson::from_matrix(&m.sigma0),
        }
    }
}

impl TryFrom<LgssmJson> for Lgssm {
    type Error = Error;

    fn try_from(raw: LgssmJson) -> Result<Self> {
        Lgssm::new(
            raw.a.into_matrix()?,
            raw.g.into_matrix()?,
            raw.c.into_matrix()?,
            raw.q.into_matrix()?,
            raw.r.into_matrix()?,
            DVector::from_vec(raw.mu0),
            raw.sigma0.into_matrix()?,
        )
    }
}

/// Filter pass output; all vectors have one entry per time step.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `p(x_t | y_{0:t-1})`, the prior belief at `t = 0`.
    pub predicted: Vec<GaussianBelief>,
    /// `p(x_t | y_{0:t})`.
    pub filtered: Vec<GaussianBelief>,
    /// `log p(y_t | y_{0:t-1})`.
    pub step_log_liks: Vec<f64>,
    /// `log p(y_{0:T-1})`.
    pub log_likelihood: f64,
}

/// Kalman filter over the full observation record.
///
/// A zero observation dimension turns the pass into pure prediction with a
/// zero log likelihood. Fails when an innovation covariance loses positive
/// definiteness.
pub fn kalman_filter(model: &Lgssm, obs: &Observations) -> Result<FilterOutput> {
    if obs.dim() != model.dim_y() {
        return Err(Error::dimension(format!(
            "observation dim {} vs model dim_y {}",
            obs.dim(),
            model.dim_y()
        )));
    }
    let t_len = obs.len();
    let d = model.dim_x();
    let dy = model.dim_y();
    let noise = model.noise_cov();
    let eye = DMatrix::<f64>::identity(d, d);

    let mut predicted = Vec::with_capacity(t_len);
    let mut filtered = Vec::with_capacity(t_len);
    let mut step_log_liks = Vec::with_capacity(t_len);

    let mut mean_pred = model.mu0.clone();
    let mut cov_pred = model.sigma0.clone();
    for t in 0..t_len {
        predicted.push(GaussianBelief { mean: mean_pred.clone(), cov: cov_pred.clone() });
        let (mean_f, cov_f, ll) = if dy == 0 {
            (mean_pred.clone(), cov_pred.clone(), 0.0)
        } else {
            let innov_cov = symmetrize(&(&model.c * &cov_pred * model.c.transpose() + &model.r));
            let chol = cholesky_psd(&innov_cov)
                .map_err(|_| Error::NotPositiveDefinite(format!("innovation covariance at step {t}")))?;
            let y_pred = &model.c * &mean_pred;
            let ll = mvn_logpdf_prefactored(obs.at(t), &y_pred, &chol);
            // K = P C' S^{-1}, computed as (S^{-1} C P)' to reuse the factor.
            let gain = chol.solve(&(&model.c * &cov_pred)).transpose();
            let mean_f = &mean_pred + &gain * (obs.at(t) - y_pred);
            let i_kc = &eye - &gain * &model.c;
            let cov_f =
                symmetrize(&(&i_kc * &cov_pred * i_kc.transpose() + &gain * &model.r * gain.transpose()));
            (mean_f, cov_f, ll)
        };
        step_log_liks.push(ll);
        filtered.push(GaussianBelief { mean: mean_f.clone(), cov: cov_f.clone() });
        mean_pred = &model.a * mean_f;
        cov_pred = symmetrize(&(&model.a * cov_f * model.a.transpose() + &noise));
    }
    let log_likelihood = step_log_liks.iter().sum();
    Ok(FilterOutput { predicted, filtered, step_log_liks, log_likelihood })
}

/// Fixed-interval smoother: marginals `p(x_t | y_{0:T-1})`.
///
/// Backward recursion over the filter pass with gain
/// `J_t = P_{t|t} A' P_{t+1|t}^{-1}`; algebraically this matches conditioning
/// the dense joint Gaussian of all states on all observations.
pub fn exact_smoother(model: &Lgssm, obs: &Observations) -> Result<Vec<GaussianBelief>> {
    let filter = kalman_filter(model, obs)?;
    smooth_from_filter(model, &filter)
}

/// Smoother marginals from an existing filter pass.
pub fn smooth_from_filter(model: &Lgssm, filter: &FilterOutput) -> Result<Vec<GaussianBelief>> {
    let t_len = filter.filtered.len();
    let mut smoothed = vec![GaussianBelief { mean: DVector::zeros(0), cov: DMatrix::zeros(0, 0) }; t_len];
    smoothed[t_len - 1] = filter.filtered[t_len - 1].clone();
    for t in (0..t_len - 1).rev() {
        let gain = smoother_gain(model, filter, t)?;
        let next_pred = &filter.predicted[t + 1];
        let next_smooth = &smoothed[t + 1];
        let mean = &filter.filtered[t].mean + &gain * (&next_smooth.mean - &next_pred.mean);
        let cov = symmetrize(
            &(&filter.filtered[t].cov + &gain * (&next_smooth.cov - &next_pred.cov) * gain.transpose()),
        );
        smoothed[t] = GaussianBelief { mean, cov };
    }
    Ok(smoothed)
}

/// `J_t = P_{t|t} A' P_{t+1|t}^{-1}`.
fn smoother_gain(model: &Lgssm, filter: &FilterOutput, t: usize) -> Result<DMatrix<f64>> {
    let chol = cholesky_psd(&filter.predicted[t + 1].cov)
        .map_err(|_| Error::NotPositiveDefinite(format!("predicted covariance at step {}", t + 1)))?;
    // J' = P_{t+1|t}^{-1} A P_{t|t}.
    Ok(chol.solve(&(&model.a * &filter.filtered[t].cov)).transpose())
}

/// Exact draw from the joint smoothing distribution `p(x_{0:T-1} | y_{0:T-1})`.
///
/// Backward sampling: `x_{T-1}` from the final filtered belief, then
/// `x_t | x_{t+1}, y_{0:t}` which is Gaussian with the smoother gain as
/// regression coefficient. Handles singular conditional covariances
/// (deterministic state directions).
pub fn sample_joint_smoothing(model: &Lgssm, obs: &Observations, rng: &mut dyn Rng) -> Result<Trajectory> {
    let filter = kalman_filter(model, obs)?;
    let t_len = filter.filtered.len();
    let last = &filter.filtered[t_len - 1];
    let mut states = vec![DVector::zeros(0); t_len];
    states[t_len - 1] = sample_mvn_psd(&last.mean, &last.cov, rng)?;
    for t in (0..t_len - 1).rev() {
        let gain = smoother_gain(model, &filter, t)?;
        let next_pred = &filter.predicted[t + 1];
        let mean = &filter.filtered[t].mean + &gain * (&states[t + 1] - &next_pred.mean);
        let cov = symmetrize(&(&filter.filtered[t].cov - &gain * &next_pred.cov * gain.transpose()));
        states[t] = sample_mvn_psd(&mean, &cov, rng)?;
    }
    Trajectory::new(states)
}

/// One conditional filter step: the belief over the unsampled block together
/// with the two predictive log densities that form the target increment.
#[derive(Debug, Clone)]
pub struct CondStep {
    /// `p(z_t | x_{0:t}, y_{0:t})`.
    pub belief: GaussianBelief,
    /// `log p(x_t | x_{0:t-1}, y_{0:t-1})`.
    pub log_pred_x: f64,
    /// `log p(y_t | x_{0:t}, y_{0:t-1})`.
    pub log_pred_y: f64,
}

/// A linear-Gaussian model split into a sampled block `x` and an analytically
/// marginalized block `z`.
///
/// Construction permutes the state so the sampled coordinates come first;
/// [`MarginalSplit::init_step`] and [`MarginalSplit::step`] then run the
/// conditional Kalman recursion in the permuted basis. The marginalized block
/// may be empty, in which case the recursion degenerates to plain density
/// evaluation.
#[derive(Debug, Clone)]
pub struct MarginalSplit {
    model: Lgssm,
    dim_xm: usize,
    /// Original coordinate index of each permuted coordinate (x block first).
    permutation: Vec<usize>,
    /// `A` columns that multiply the z block.
    a_z: DMatrix<f64>,
    c_x: DMatrix<f64>,
    c_z: DMatrix<f64>,
    noise: DMatrix<f64>,
}

impl MarginalSplit {
    /// `x_indices` selects the sampled coordinates of `base`'s state.
    pub fn new(base: &Lgssm, x_indices: &[usize]) -> Result<Self> {
        let d = base.dim_x();
        if x_indices.is_empty() {
            return Err(Error::validation("at least one sampled coordinate is required"));
        }
        let mut seen = vec![false; d];
        for &i in x_indices {
            if i >= d {
                return Err(Error::validation(format!("coordinate {i} out of range for dimension {d}")));
            }
            if seen[i] {
                return Err(Error::validation(format!("coordinate {i} selected twice")));
            }
            seen[i] = true;
        }
        let mut permutation: Vec<usize> = x_indices.to_vec();
        permutation.extend((0..d).filter(|i| !seen[*i]));
        // Permutation matrix: rows of P select original coordinates, so the
        // permuted state is x_perm = P x with P[(k, permutation[k])] = 1.
        let mut p = DMatrix::<f64>::zeros(d, d);
        for (k, &orig) in permutation.iter().enumerate() {
            p[(k, orig)] = 1.0;
        }
        let model = Lgssm::new(
            &p * base.a() * p.transpose(),
            &p * base.g(),
            base.c() * p.transpose(),
            base.q().clone(),
            base.r().clone(),
            &p * base.mu0(),
            symmetrize(&(&p * base.sigma0() * p.transpose())),
        )?;
        let dim_xm = x_indices.len();
        let dim_z = d - dim_xm;
        let a_z = model.a().columns(dim_xm, dim_z).into_owned();
        let c_x = model.c().columns(0, dim_xm).into_owned();
        let c_z = model.c().columns(dim_xm, dim_z).into_owned();
        let noise = model.noise_cov();
        Ok(Self { model, dim_xm, permutation, a_z, c_x, c_z, noise })
    }

    pub fn dim_x(&self) -> usize {
        self.dim_xm
    }

    pub fn dim_z(&self) -> usize {
        self.model.dim_x() - self.dim_xm
    }

    pub fn dim_y(&self) -> usize {
        self.model.dim_y()
    }

    /// The permuted full model (sampled block first).
    pub fn permuted_model(&self) -> &Lgssm {
        &self.model
    }

    /// Original coordinate index of each permuted coordinate.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Prior predictive of the sampled block, `p(x_0)`.
    pub fn init_predict(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mu = self.model.mu0().rows(0, self.dim_xm).into_owned();
        let cov = self.model.sigma0().view((0, 0), (self.dim_xm, self.dim_xm)).into_owned();
        (mu, cov)
    }

    /// Absorb `x_0, y_0`.
    pub fn init_step(&self, x0: &DVector<f64>, y0: &DVector<f64>) -> Result<CondStep> {
        self.condition_and_update(self.model.mu0().clone(), self.model.sigma0().clone(), x0, y0, 0)
    }

    /// Predictive of the sampled block, `p(x_t | x_{0:t-1}, y_{0:t-1})`.
    pub fn predict(&self, belief: &GaussianBelief, x_prev: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (mu, cov) = self.joint_predict(belief, x_prev);
        (
            mu.rows(0, self.dim_xm).into_owned(),
            cov.view((0, 0), (self.dim_xm, self.dim_xm)).into_owned(),
        )
    }

    /// Absorb `x_t, y_t` for `t >= 1`.
    pub fn step(
        &self,
        belief: &GaussianBelief,
        x_prev: &DVector<f64>,
        x_t: &DVector<f64>,
        y_t: &DVector<f64>,
        t: usize,
    ) -> Result<CondStep> {
        let (mu, cov) = self.joint_predict(belief, x_prev);
        self.condition_and_update(mu, cov, x_t, y_t, t)
    }

    /// Joint one-step-ahead moments of `(x_t, z_t)` given the prefix: the
    /// previous sampled value is known, the previous z is `belief`.
    fn joint_predict(&self, belief: &GaussianBelief, x_prev: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let dz = self.dim_z();
        let mut joint_prev = DVector::zeros(self.model.dim_x());
        joint_prev.rows_mut(0, self.dim_xm).copy_from(x_prev);
        joint_prev.rows_mut(self.dim_xm, dz).copy_from(&belief.mean);
        let mu = self.model.a() * joint_prev;
        let cov = symmetrize(&(&self.a_z * &belief.cov * self.a_z.transpose() + &self.noise));
        (mu, cov)
    }

    /// Shared tail of init/step: condition the joint Gaussian on the sampled
    /// block, then run the measurement update on the z belief.
    fn condition_and_update(
        &self,
        mu: DVector<f64>,
        cov: DMatrix<f64>,
        x_t: &DVector<f64>,
        y_t: &DVector<f64>,
        t: usize,
    ) -> Result<CondStep> {
        let dx = self.dim_xm;
        let dz = self.dim_z();
        let dy = self.model.dim_y();
        if x_t.len() != dx {
            return Err(Error::dimension(format!("sampled block has dimension {}, expected {dx}", x_t.len())));
        }

        let mu_x = mu.rows(0, dx).into_owned();
        let mu_z = mu.rows(dx, dz).into_owned();
        let cov_xx = cov.view((0, 0), (dx, dx)).into_owned();
        let cov_xz = cov.view((0, dx), (dx, dz)).into_owned();
        let cov_zz = cov.view((dx, dx), (dz, dz)).into_owned();

        let chol_xx = cholesky_psd(&symmetrize(&cov_xx))
            .map_err(|_| Error::NotPositiveDefinite(format!("sampled-block predictive covariance at step {t}")))?;
        let log_pred_x = mvn_logpdf_prefactored(x_t, &mu_x, &chol_xx);

        // Regression of z on x: (Sigma_zx Sigma_xx^{-1}) = (Sigma_xx^{-1} Sigma_xz)'.
        let gain_zx = chol_xx.solve(&cov_xz).transpose();
        let mean_cond = &mu_z + &gain_zx * (x_t - &mu_x);
        let cov_cond = symmetrize(&(&cov_zz - &gain_zx * &cov_xz));

        if dy == 0 {
            return Ok(CondStep {
                belief: GaussianBelief { mean: mean_cond, cov: cov_cond },
                log_pred_x,
                log_pred_y: 0.0,
            });
        }

        let y_pred = &self.c_x * x_t + &self.c_z * &mean_cond;
        let innov_cov = symmetrize(&(&self.c_z * &cov_cond * self.c_z.transpose() + self.model.r()));
        let chol_y = cholesky_psd(&innov_cov)
            .map_err(|_| Error::NotPositiveDefinite(format!("innovation covariance at step {t}")))?;
        let log_pred_y = mvn_logpdf_prefactored(y_t, &y_pred, &chol_y);

        let gain = chol_y.solve(&(&self.c_z * &cov_cond)).transpose();
        let mean_post = &mean_cond + &gain * (y_t - &y_pred);
        let i_kc = DMatrix::<f64>::identity(dz, dz) - &gain * &self.c_z;
        let cov_post =
            symmetrize(&(&i_kc * &cov_cond * i_kc.transpose() + &gain * self.model.r() * gain.transpose()));
        Ok(CondStep {
            belief: GaussianBelief { mean: mean_post, cov: cov_post },
            log_pred_x,
            log_pred_y,
        })
    }
}

/// Random stable system for smoke and regression tests: eigenvalue moduli
/// drawn from `[0.1, 0.95]` (complex values in conjugate pairs), a random
/// orthogonal state basis, a single process-noise channel `G = e_1` with
/// variance `0.1`, measurement matrix with i.i.d. standard normal entries,
/// measurement noise `0.1 I`, and the stationary state covariance as prior.
pub fn random_stable_system(dim_x: usize, dim_y: usize, rng: &mut dyn Rng) -> Result<Lgssm> {
    use rand::RngExt;
    use rand_distr::{Distribution, StandardNormal};
    if dim_x == 0 || dim_y == 0 {
        return Err(Error::validation("state and observation dimensions must be positive"));
    }

    // Real block-diagonal eigenvalue structure.
    let mut lambda = DMatrix::<f64>::zeros(dim_x, dim_x);
    let mut k = 0;
    while k < dim_x {
        let modulus = rng.random_range(0.1..0.95);
        if dim_x - k >= 2 && rng.random::<bool>() {
            let angle = rng.random_range(0.15..std::f64::consts::PI - 0.15);
            let (s, c) = angle.sin_cos();
            lambda[(k, k)] = modulus * c;
            lambda[(k, k + 1)] = -modulus * s;
            lambda[(k + 1, k)] = modulus * s;
            lambda[(k + 1, k + 1)] = modulus * c;
            k += 2;
        } else {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            lambda[(k, k)] = sign * modulus;
            k += 1;
        }
    }

    let basis = random_orthogonal(dim_x, rng);
    let a = &basis * lambda * basis.transpose();

    let mut g = DMatrix::<f64>::zeros(dim_x, 1);
    g[(0, 0)] = 1.0;
    let q = DMatrix::from_element(1, 1, 0.1);
    let c = DMatrix::from_fn(dim_y, dim_x, |_, _| StandardNormal.sample(rng));
    let r = DMatrix::<f64>::identity(dim_y, dim_y) * 0.1;
    let mu0 = DVector::zeros(dim_x);
    let sigma0 = stationary_covariance_of(&a, &(&g * &q * g.transpose()))?;
    Lgssm::new(a, g, c, q, r, mu0, sigma0)
}

/// Fixed point of `P = A P A' + W` by iteration; requires a stable `A`.
pub fn stationary_covariance_of(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = w.clone();
    for _ in 0..20_000 {
        let next = symmetrize(&(a * &p * a.transpose() + w));
        let delta = (&next - &p).amax();
        p = next;
        if delta <= 1e-14 * (1.0 + p.amax()) {
            return Ok(p);
        }
    }
    Err(Error::validation(
        "stationary covariance iteration did not converge; is A stable?".into(),
    ))
}

/// Haar-ish random orthogonal matrix: QR of a Gaussian matrix with the sign
/// convention that makes the factorization unique.
pub fn random_orthogonal(dim: usize, rng: &mut dyn Rng) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let gauss = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}
