//! Small shared linear-algebra helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Condition-number bound (as the squared ratio of extreme Cholesky diagonal
/// entries) beyond which a covariance is treated as numerically singular.
const MAX_CONDITION: f64 = 1e12;

/// Forces exact symmetry: `m <- (m + m^T) / 2`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factorization with a condition-number guard on the factor
/// diagonal. Fails on indefinite or near-singular input.
pub(crate) fn cholesky_guarded(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m.clone()).ok_or(Error::SingularInnovation)?;
    let l = chol.l_dirty();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > 0.0) || (hi / lo).powi(2) > MAX_CONDITION {
        return Err(Error::SingularInnovation);
    }
    Ok(chol)
}

/// log |M| from a Cholesky factor.
pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Moment-matches a weighted set of Gaussians sharing one state space:
/// mean = sum w_i mu_i, cov = sum w_i (P_i + spread outer product).
pub(crate) fn moment_match(
    weights: &[f64],
    means: &[DVector<f64>],
    covs: &[DMatrix<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = means[0].len();
    let mut mean = DVector::zeros(n);
    for (w, mu) in weights.iter().zip(means) {
        mean.axpy(*w, mu, 1.0);
    }
    let mut cov = DMatrix::zeros(n, n);
    for ((w, mu), p) in weights.iter().zip(means).zip(covs) {
        let d = mu - &mean;
        cov += (p + d.clone() * d.transpose()) * *w;
    }
    symmetrize(&mut cov);
    (mean, cov)
}
