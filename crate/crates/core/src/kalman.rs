//! Linear Kalman predict/update and the innovation likelihood evaluators.
//!
//! All densities are handled in log space; the covariance update uses the
//! Joseph form and Cholesky-based solves so posteriors stay symmetric PSD
//! under rounding.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_guarded, log_det, symmetrize};
use crate::models::{MotionModel, MEAS_DIM};

const LN_2PI: f64 = 1.8378770664093453_f64;

/// A Gaussian state estimate: mean vector plus covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianEstimate {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(mean.len(), cov.nrows());
        assert_eq!(cov.nrows(), cov.ncols());
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The shared position block (state indices 0..3).
    pub fn position(&self) -> DVector<f64> {
        self.mean.rows(0, MEAS_DIM).into_owned()
    }
}

/// Measurement residual `v = z - H x` with its covariance `S = H P H^T + R`.
#[derive(Debug, Clone)]
pub struct Innovation {
    pub v: DVector<f64>,
    pub s: DMatrix<f64>,
}

/// Propagates an estimate through the model kinematics:
/// `mean <- F mean`, `cov <- F cov F^T + Q`, re-symmetrized.
pub fn predict(est: &GaussianEstimate, model: &MotionModel, dt: f64) -> Result<GaussianEstimate> {
    if est.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            actual: est.dim(),
        });
    }
    let f = model.transition_matrix(dt)?;
    let q = model.process_noise(dt)?;
    let mean = &f * &est.mean;
    let mut cov = &f * &est.cov * f.transpose() + q;
    symmetrize(&mut cov);
    Ok(GaussianEstimate::new(mean, cov))
}

/// Measurement update with position-only measurement `z` and noise `R`.
///
/// Returns the posterior and the innovation. The gain solves through the
/// Cholesky factor of S and the covariance uses the Joseph form
/// `(I - K H) P (I - K H)^T + K R K^T`. Fails with
/// [`Error::SingularInnovation`] when S cannot be factorized or is too
/// ill-conditioned.
pub fn update(
    est: &GaussianEstimate,
    model: &MotionModel,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<(GaussianEstimate, Innovation)> {
    if z.len() != MEAS_DIM {
        return Err(Error::DimensionMismatch {
            expected: MEAS_DIM,
            actual: z.len(),
        });
    }
    if est.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            actual: est.dim(),
        });
    }
    let n = est.dim();

    // H is the leading-block selector, so H x and H P H^T are plain slices.
    let v = z - est.mean.rows(0, MEAS_DIM);
    let mut s = est.cov.view((0, 0), (MEAS_DIM, MEAS_DIM)).into_owned() + r;
    symmetrize(&mut s);
    let chol = cholesky_guarded(&s)?;

    // K = P H^T S^-1, via K^T = S^-1 (P H^T)^T.
    let ph_t = est.cov.columns(0, MEAS_DIM).into_owned();
    let mut kt = ph_t.transpose();
    chol.solve_mut(&mut kt);
    let k = kt.transpose();

    let mean = &est.mean + &k * &v;

    // Joseph form: A = I - K H has -K in its leading columns.
    let mut a = DMatrix::identity(n, n);
    for j in 0..MEAS_DIM {
        for i in 0..n {
            a[(i, j)] -= k[(i, j)];
        }
    }
    let mut cov = &a * &est.cov * a.transpose() + &k * r * k.transpose();
    symmetrize(&mut cov);

    Ok((GaussianEstimate::new(mean, cov), Innovation { v, s }))
}

/// Log of the normalized Gaussian innovation density:
/// `-1/2 (d ln 2pi + ln|S| + v^T S^-1 v)`.
pub fn gaussian_loglik(inn: &Innovation) -> Result<f64> {
    let d = inn.v.len() as f64;
    let chol = cholesky_guarded(&inn.s)?;
    let maha = quad_form(&chol, &inn.v);
    Ok(-0.5 * (d * LN_2PI + log_det(&chol) + maha))
}

/// Log density of a multivariate Student-t with `nu` degrees of freedom and
/// scale matrix S (used directly, without a moment correction).
pub fn student_t_loglik(inn: &Innovation, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "student-t dof must be positive, got {nu}"
        )));
    }
    let d = inn.v.len() as f64;
    let chol = cholesky_guarded(&inn.s)?;
    let maha = quad_form(&chol, &inn.v);
    Ok(ln_gamma(0.5 * (nu + d))
        - ln_gamma(0.5 * nu)
        - 0.5 * d * (nu * std::f64::consts::PI).ln()
        - 0.5 * log_det(&chol)
        - 0.5 * (nu + d) * (1.0 + maha / nu).ln())
}

/// `v^T S^-1 v` through an existing Cholesky factor.
fn quad_form(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, v: &DVector<f64>) -> f64 {
    let x = chol.solve(v);
    v.dot(&x)
}
