//! Log-domain and Gaussian numerics shared across the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const LOG_2PI: f64 = 1.8378770664093453;

/// `log(sum(exp(v)))` with max subtraction.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`; never
/// returns NaN for inputs that are finite or `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalized linear-domain probabilities from unnormalized log weights.
///
/// Errors when the slice is empty or every weight is `-inf`.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    if log_w.is_empty() {
        return Err(Error::validation("cannot normalize an empty weight vector"));
    }
    if log_w.iter().any(|w| w.is_nan()) {
        return Err(Error::NonFinite("NaN log weight".into()));
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::validation("all log weights are -inf"));
    }
    let unnorm: Vec<f64> = log_w.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|p| p / total).collect())
}

/// `(x - mean)` evaluated under `N(0, LL')` given the Cholesky factor.
///
/// Written against the factor so callers can amortize the decomposition.
pub fn mvn_logpdf_prefactored(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x.len();
    debug_assert_eq!(mean.len(), d);
    let diff = x - mean;
    // L z = diff; the quadratic form is |z|^2.
    let z = chol.l_dirty().solve_lower_triangular(&diff).expect("Cholesky factor is nonsingular");
    let log_det = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (d as f64 * LOG_2PI + log_det + z.norm_squared())
}

/// Multivariate normal log density; errors when `cov` is not positive
/// definite.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky_psd(cov)?;
    Ok(mvn_logpdf_prefactored(x, mean, &chol))
}

/// Cholesky with a descriptive error instead of `None`.
pub fn cholesky_psd(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    cov.clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} covariance", cov.nrows(), cov.ncols())))
}

/// Draw from `N(mean, LL')` given the Cholesky factor.
pub fn sample_mvn_prefactored(
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
    rng: &mut dyn Rng,
) -> DVector<f64> {
    let d = mean.len();
    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    mean + chol.l_dirty().lower_triangle() * z
}

/// Draw from `N(mean, cov)` for any symmetric positive *semi*definite `cov`.
///
/// Uses a symmetric eigendecomposition so that exactly singular covariances
/// (deterministic coordinates) are handled; eigenvalues below a relative
/// floor are treated as zero.
pub fn sample_mvn_psd(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut dyn Rng) -> Result<DVector<f64>> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::dimension(format!(
            "covariance {}x{} vs mean length {d}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if d == 0 {
        return Ok(mean.clone());
    }
    let eig = symmetrize(cov).symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let floor = max_ev * 1e-13;
    if eig.eigenvalues.iter().any(|&ev| ev < -floor.max(1e-300) - 1e-12 * max_ev.max(1.0)) {
        return Err(Error::NotPositiveDefinite("negative eigenvalue in sampling covariance".into()));
    }
    let mut draw = mean.clone();
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > floor {
            let z: f64 = StandardNormal.sample(rng);
            draw += eig.eigenvectors.column(i) * (ev.sqrt() * z);
        }
    }
    Ok(draw)
}

/// `(m + m') / 2`; cheap guard against drift from repeated updates.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix; used by tests and validators.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
