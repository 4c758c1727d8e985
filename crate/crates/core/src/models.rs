//! Constant-velocity and constant-acceleration motion models.
//!
//! State layout is grouped by derivative order: positions first, then
//! velocities, then (CA only) accelerations, three axes each:
//!
//! - CV (dim 6): `[px, py, pz, vx, vy, vz]`
//! - CA (dim 9): `[px, py, pz, vx, vy, vz, ax, ay, az]`
//!
//! The position block occupies indices `0..3` in every model, so the
//! measurement matrix is a leading-block selector and cross-model mappings
//! are plain slices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::GaussianEstimate;

/// Measurement dimension: position only, `z = [px, py, pz]`.
pub const MEAS_DIM: usize = 3;

/// Default variance, (m/s^2)^2, assigned to acceleration states created by
/// zero-padding a CV estimate into CA space. Large enough to avoid
/// overconfident padded states, finite so the padded covariance stays
/// invertible.
pub const DEFAULT_PAD_VARIANCE: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Constant velocity, white-acceleration process noise.
    Cv,
    /// Constant acceleration, white-jerk process noise.
    Ca,
}

impl ModelKind {
    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::Cv => 6,
            ModelKind::Ca => 9,
        }
    }
}

/// One member of the model bank: kinematics plus its process-noise intensity
/// `q` ((m/s^2)^2 for CV white acceleration, (m/s^3)^2 for CA white jerk).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub id: usize,
    pub kind: ModelKind,
    pub q: f64,
}

impl MotionModel {
    pub fn new(id: usize, kind: ModelKind, q: f64) -> Self {
        assert!(q > 0.0, "process noise intensity must be positive");
        Self { id, kind, q }
    }

    pub fn cv(id: usize, q: f64) -> Self {
        Self::new(id, ModelKind::Cv, q)
    }

    pub fn ca(id: usize, q: f64) -> Self {
        Self::new(id, ModelKind::Ca, q)
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    /// State transition matrix F over a step of `dt` seconds.
    ///
    /// Per-axis blocks are `[[1, dt], [0, 1]]` (CV) and
    /// `[[1, dt, dt^2/2], [0, 1, dt], [0, 0, 1]]` (CA), laid out over the
    /// grouped state ordering.
    pub fn transition_matrix(&self, dt: f64) -> Result<DMatrix<f64>> {
        if !(dt > 0.0) {
            return Err(Error::NonPositiveDt(dt));
        }
        let n = self.state_dim();
        let mut f = DMatrix::identity(n, n);
        for axis in 0..3 {
            f[(axis, 3 + axis)] = dt;
            if self.kind == ModelKind::Ca {
                f[(axis, 6 + axis)] = 0.5 * dt * dt;
                f[(3 + axis, 6 + axis)] = dt;
            }
        }
        Ok(f)
    }

    /// Discrete white-noise process covariance Q over `dt` seconds.
    /// Symmetric positive semidefinite by construction.
    pub fn process_noise(&self, dt: f64) -> Result<DMatrix<f64>> {
        if !(dt > 0.0) {
            return Err(Error::NonPositiveDt(dt));
        }
        let n = self.state_dim();
        let q = self.q;
        let mut m = DMatrix::zeros(n, n);
        match self.kind {
            ModelKind::Cv => {
                let pp = q * dt.powi(3) / 3.0;
                let pv = q * dt.powi(2) / 2.0;
                let vv = q * dt;
                for axis in 0..3 {
                    m[(axis, axis)] = pp;
                    m[(axis, 3 + axis)] = pv;
                    m[(3 + axis, axis)] = pv;
                    m[(3 + axis, 3 + axis)] = vv;
                }
            }
            ModelKind::Ca => {
                let pp = q * dt.powi(5) / 20.0;
                let pv = q * dt.powi(4) / 8.0;
                let pa = q * dt.powi(3) / 6.0;
                let vv = q * dt.powi(3) / 3.0;
                let va = q * dt.powi(2) / 2.0;
                let aa = q * dt;
                for axis in 0..3 {
                    let (p, v, a) = (axis, 3 + axis, 6 + axis);
                    m[(p, p)] = pp;
                    m[(v, v)] = vv;
                    m[(a, a)] = aa;
                    m[(p, v)] = pv;
                    m[(v, p)] = pv;
                    m[(p, a)] = pa;
                    m[(a, p)] = pa;
                    m[(v, a)] = va;
                    m[(a, v)] = va;
                }
            }
        }
        Ok(m)
    }

    /// Measurement matrix H selecting the position block: `[I3 | 0]`.
    pub fn measurement_matrix(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut h = DMatrix::zeros(MEAS_DIM, n);
        for i in 0..MEAS_DIM {
            h[(i, i)] = 1.0;
        }
        h
    }
}

/// Maps an estimate from one model's state space into another's.
///
/// CA -> CV truncates the acceleration block; CV -> CA zero-pads the
/// acceleration mean and gives the padded diagonal `pad_variance` so the
/// result stays nonsingular. Mapping a model onto itself is the identity.
pub fn map_state(
    from: &MotionModel,
    to: &MotionModel,
    est: &GaussianEstimate,
    pad_variance: f64,
) -> GaussianEstimate {
    debug_assert_eq!(est.dim(), from.state_dim());
    match (from.kind, to.kind) {
        (a, b) if a == b => est.clone(),
        (ModelKind::Cv, ModelKind::Ca) => {
            let mut mean = DVector::zeros(9);
            mean.rows_mut(0, 6).copy_from(&est.mean);
            let mut cov = DMatrix::zeros(9, 9);
            cov.view_mut((0, 0), (6, 6)).copy_from(&est.cov);
            for i in 6..9 {
                cov[(i, i)] = pad_variance;
            }
            GaussianEstimate::new(mean, cov)
        }
        (ModelKind::Ca, ModelKind::Cv) => {
            let mean = est.mean.rows(0, 6).into_owned();
            let cov = est.cov.view((0, 0), (6, 6)).into_owned();
            GaussianEstimate::new(mean, cov)
        }
        _ => unreachable!(),
    }
}
