//! Dense joint Gaussian of a linear-Gaussian state-space model.
//!
//! For horizon `T` the stacked vector is `(x_0, .., x_{T-1}, y_0, .., y_{T-1})`
//! and its mean and covariance follow from the linearity of the model alone:
//!
//! ```text
//! Cov(x_s, x_t)   = Cov(x_s, x_{t-1}) A'          (s < t)
//! Cov(x_t, x_t)   = A Cov(x_{t-1}, x_{t-1}) A' + G Q G'
//! Cov(x_s, y_t)   = Cov(x_s, x_t) C'
//! Cov(y_s, y_t)   = C Cov(x_s, x_t) C' + [s = t] R
//! ```
//!
//! Smoothing marginals, likelihoods, and conditional distributions all reduce
//! to index selection and one Schur complement on this matrix, which makes the
//! construction a genuinely independent cross-check of any filter recursion.

use nalgebra::{DMatrix, DVector};
use pmcmc::gaussian::Lgssm;

/// Multivariate Gaussian in moment form with block selection and
/// conditioning. Covariances may be singular; densities use an
/// eigendecomposition and reject directions with zero variance.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(cov.nrows(), mean.len(), "covariance rows vs mean length");
        assert_eq!(cov.ncols(), mean.len(), "covariance cols vs mean length");
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Marginal over the selected coordinates, in the given order.
    pub fn marginal(&self, idx: &[usize]) -> JointGaussian {
        let k = idx.len();
        assert!(k > 0, "empty marginal selection");
        for &i in idx {
            assert!(i < self.dim(), "index {i} out of range {}", self.dim());
        }
        let mean = DVector::from_fn(k, |r, _| self.mean[idx[r]]);
        let cov = DMatrix::from_fn(k, k, |r, c| self.cov[(idx[r], idx[c])]);
        JointGaussian { mean, cov }
    }

    /// Distribution of coordinates `keep` given that coordinates `given`
    /// equal `values`. The observed block must be nonsingular.
    pub fn conditional(&self, keep: &[usize], given: &[usize], values: &DVector<f64>) -> JointGaussian {
        assert_eq!(given.len(), values.len(), "one value per conditioned coordinate");
        assert!(!keep.is_empty(), "empty keep selection");
        let kk = self.marginal_cov(keep, keep);
        let kg = self.marginal_cov(keep, given);
        let gg = self.marginal_cov(given, given);
        let mu_k = DVector::from_fn(keep.len(), |r, _| self.mean[keep[r]]);
        let mu_g = DVector::from_fn(given.len(), |r, _| self.mean[given[r]]);
        let chol = gg.cholesky().expect("conditioned block must be positive definite");
        // keep-given gain: Sigma_kg Sigma_gg^{-1} = (Sigma_gg^{-1} Sigma_gk)'.
        let gain = chol.solve(&kg.transpose()).transpose();
        let mean = mu_k + &gain * (values - mu_g);
        let cov = &kk - gain * kg.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        JointGaussian { mean, cov }
    }

    fn marginal_cov(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.cov[(rows[r], cols[c])])
    }

    /// Log density at `value`, via an eigendecomposition of the covariance.
    /// Panics when the covariance is singular (to machine precision).
    pub fn log_density(&self, value: &DVector<f64>) -> f64 {
        assert_eq!(value.len(), self.dim(), "value dimension");
        let eig = self.cov.clone().symmetric_eigen();
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let floor = max_ev * 1e-12;
        let centered = eig.eigenvectors.transpose() * (value - &self.mean);
        let mut logdet = 0.0;
        let mut quad = 0.0;
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            assert!(ev > floor, "singular covariance: eigenvalue {ev} of max {max_ev}");
            logdet += ev.ln();
            quad += centered[i] * centered[i] / ev;
        }
        -0.5 * (self.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
    }
}

/// Coordinate bookkeeping for the stacked vector: states first
/// (`t * dim_x + i`), then observations (`t_len * dim_x + t * dim_y + j`).
#[derive(Debug, Clone, Copy)]
pub struct StackIndex {
    pub t_len: usize,
    pub dim_x: usize,
    pub dim_y: usize,
}

impl StackIndex {
    pub fn x(&self, t: usize, i: usize) -> usize {
        assert!(t < self.t_len && i < self.dim_x);
        t * self.dim_x + i
    }

    pub fn y(&self, t: usize, j: usize) -> usize {
        assert!(t < self.t_len && j < self.dim_y);
        self.t_len * self.dim_x + t * self.dim_y + j
    }

    pub fn xs_at(&self, t: usize) -> Vec<usize> {
        (0..self.dim_x).map(|i| self.x(t, i)).collect()
    }

    pub fn ys_at(&self, t: usize) -> Vec<usize> {
        (0..self.dim_y).map(|j| self.y(t, j)).collect()
    }

    pub fn all_xs(&self) -> Vec<usize> {
        (0..self.t_len).flat_map(|t| self.xs_at(t)).collect()
    }

    pub fn all_ys(&self) -> Vec<usize> {
        (0..self.t_len).flat_map(|t| self.ys_at(t)).collect()
    }

    /// The chosen state coordinates at every time, states ordered by time.
    pub fn coords_all_times(&self, coords: &[usize]) -> Vec<usize> {
        (0..self.t_len).flat_map(|t| coords.iter().map(move |&i| self.x(t, i))).collect()
    }
}

/// Joint Gaussian of all states and observations over `t_len` steps.
pub fn lgssm_joint(model: &Lgssm, t_len: usize) -> (JointGaussian, StackIndex) {
    assert!(t_len > 0, "horizon must be positive");
    let d = model.dim_x();
    let dy = model.dim_y();
    let idx = StackIndex { t_len, dim_x: d, dim_y: dy };
    let n = t_len * (d + dy);

    // State means and pairwise state covariances.
    let mut x_means: Vec<DVector<f64>> = Vec::with_capacity(t_len);
    x_means.push(model.mu0().clone());
    for _ in 1..t_len {
        x_means.push(model.a() * x_means.last().unwrap());
    }
    let noise = model.noise_cov();
    let mut x_cov: Vec<Vec<DMatrix<f64>>> = vec![vec![DMatrix::zeros(d, d); t_len]; t_len];
    x_cov[0][0] = model.sigma0().clone();
    for t in 1..t_len {
        x_cov[t][t] = model.a() * &x_cov[t - 1][t - 1] * model.a().transpose() + &noise;
        for s in 0..t {
            x_cov[s][t] = &x_cov[s][t - 1] * model.a().transpose();
            x_cov[t][s] = x_cov[s][t].transpose();
        }
    }

    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    for t in 0..t_len {
        for i in 0..d {
            mean[idx.x(t, i)] = x_means[t][i];
        }
        let y_mean = model.c() * &x_means[t];
        for j in 0..dy {
            mean[idx.y(t, j)] = y_mean[j];
        }
    }
    for s in 0..t_len {
        for t in 0..t_len {
            let xx = &x_cov[s][t];
            for i in 0..d {
                for j in 0..d {
                    cov[(idx.x(s, i), idx.x(t, j))] = xx[(i, j)];
                }
            }
            let xy = xx * model.c().transpose();
            for i in 0..d {
                for j in 0..dy {
                    cov[(idx.x(s, i), idx.y(t, j))] = xy[(i, j)];
                    cov[(idx.y(t, j), idx.x(s, i))] = xy[(i, j)];
                }
            }
            let mut yy = model.c() * xx * model.c().transpose();
            if s == t {
                yy += model.r();
            }
            for i in 0..dy {
                for j in 0..dy {
                    cov[(idx.y(s, i), idx.y(t, j))] = yy[(i, j)];
                }
            }
        }
    }
    (JointGaussian::new(mean, cov), idx)
}
