//! Constant-velocity Kalman filter over `[u, v, du, dv]`.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrackState;

/// Noise model. Defaults put the larger variances on the `u` (row) terms.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanConfig {
    pub q: Matrix4<f64>,
    pub r: Matrix4<f64>,
    pub p0: Matrix4<f64>,
}

impl KalmanConfig {
    pub fn from_diagonals(q: [f64; 4], r: [f64; 4], p0: [f64; 4]) -> Self {
        let d = |v: [f64; 4]| Matrix4::from_diagonal(&Vector4::from(v));
        Self {
            q: d(q),
            r: d(r),
            p0: d(p0),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("P0", &self.p0)] {
            crate::model::validate_covariance(m).map_err(|e| format!("{name}: {e}"))?;
        }
        Ok(())
    }
}

impl Default for KalmanConfig {
    fn default() -> Self {
        let d = KalmanDiagonals::default();
        Self::from_diagonals(d.q_diag, d.r_diag, d.p0_diag)
    }
}

/// Diagonal noise terms as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanDiagonals {
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 4],
    pub p0_diag: [f64; 4],
}

impl Default for KalmanDiagonals {
    fn default() -> Self {
        Self {
            q_diag: [4.0, 1.0, 4.0, 1.0],
            r_diag: [2.0, 0.5, 2.0, 0.5],
            p0_diag: [10.0, 10.0, 25.0, 25.0],
        }
    }
}

/// State transition: position advances by one frame of velocity.
pub fn transition() -> Matrix4<f64> {
    Matrix4::new(
        1.0, 0.0, 1.0, 0.0, //
        0.0, 1.0, 0.0, 1.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    )
}

/// Every state variable is observed directly.
pub fn observation() -> Matrix4<f64> {
    Matrix4::identity()
}

/// A priori estimate: `x⁻ = A·x`, `P⁻ = A·P·Aᵀ + Q`.
pub fn predict(state: &TrackState, q: &Matrix4<f64>) -> TrackState {
    let a = transition();
    let p = a * state.p * a.transpose() + q;
    TrackState::new(a * state.x, symmetrize(p))
}

/// A posteriori estimate with the Joseph-form covariance update.
pub fn update(prior: &TrackState, z: &Vector4<f64>, r: &Matrix4<f64>, h: &Matrix4<f64>) -> Result<TrackState> {
    let s = h * prior.p * h.transpose() + r;
    let s = symmetrize(s);
    if s.cholesky().is_none() {
        return Err(Error::SingularInnovation);
    }
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
    let k = prior.p * h.transpose() * s_inv;
    let x = prior.x + k * (z - h * prior.x);
    let i_kh = Matrix4::identity() - k * h;
    let p = i_kh * prior.p * i_kh.transpose() + k * r * k.transpose();
    Ok(TrackState::new(x, symmetrize(p)))
}

fn symmetrize(m: Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}
