//! Iterated extended Kalman filter over the 8-dimensional receiver state.
//!
//! The state vector is `[p (3), v (3), c*dt, c*dt_dot]` in ECEF meters,
//! meters per second, meters and meters per second respectively.
//!
//! The measurement update is solved as a Gauss-Newton problem on the MAP
//! cost
//!
//! ```text
//! V(x) = sum_b (z_b - g_b(x))^T R_b^-1 (z_b - g_b(x)) + (x_prior - x)^T P^-1 (x_prior - x)
//! ```
//!
//! with an optional grid line search on the step length so that `V` never
//! increases between inner iterations.

mod block;
mod iekf;

pub use block::{stack_blocks, LinearModel, MeasurementBlock, MeasurementModel};
pub use iekf::{
    criterion, iekf_update, kalman_gain, line_search, step_direction, IekfConfig,
    UpdateDiagnostics,
};

use nalgebra::{Dyn, OMatrix, SMatrix, SVector, Vector3, U8};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 8;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
/// Measurement Jacobian, `m x 8`.
pub type Jacobian = OMatrix<f64, Dyn, U8>;

/// Index of the first position component.
pub const POS: usize = 0;
/// Index of the first velocity component.
pub const VEL: usize = 3;
/// Receiver clock bias, meters.
pub const CLOCK_BIAS: usize = 6;
/// Receiver clock drift, meters per second.
pub const CLOCK_DRIFT: usize = 7;

const SYMMETRY_TOLERANCE: f64 = 1e-9;
const PSD_TOLERANCE: f64 = 1e-9;

/// Gaussian belief over the receiver state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

impl StateEstimate {
    pub fn new(mean: StateVector, covariance: StateMatrix) -> Result<Self> {
        let est = Self { mean, covariance };
        est.validate()?;
        Ok(est)
    }

    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(POS).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(VEL).into_owned()
    }

    pub fn position_covariance(&self) -> nalgebra::Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(POS, POS).into_owned()
    }

    /// Checks finiteness, symmetry and positive semi-definiteness.
    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field: "mean" });
        }
        check_covariance(&self.covariance)
    }
}

pub(crate) fn check_covariance(p: &StateMatrix) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: "covariance",
        });
    }
    let scale = p.amax().max(f64::MIN_POSITIVE);
    if (p - p.transpose()).amax() > SYMMETRY_TOLERANCE * scale {
        return Err(Error::contract("covariance is not symmetric"));
    }
    let trace = p.trace();
    let min_eigenvalue = p.symmetric_eigenvalues().min();
    if min_eigenvalue < -PSD_TOLERANCE * trace.abs() {
        return Err(Error::NotPositiveSemiDefinite { min_eigenvalue });
    }
    Ok(())
}

pub(crate) fn symmetrize(p: &StateMatrix) -> StateMatrix {
    (p + p.transpose()) * 0.5
}

/// White-noise intensities of the constant-velocity + clock model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProcessNoise {
    /// Acceleration power spectral density per axis, m^2/s^3.
    pub acceleration_psd: f64,
    /// Clock bias random-walk intensity, m^2/s.
    pub clock_bias_psd: f64,
    /// Clock drift random-walk intensity, m^2/s^3.
    pub clock_drift_psd: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            acceleration_psd: 0.5,
            clock_bias_psd: 0.1,
            clock_drift_psd: 0.01,
        }
    }
}

/// Linear state transition `x' = F x + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub transition_matrix: StateMatrix,
    pub process_noise: StateMatrix,
    pub dt: f64,
}

impl TransitionModel {
    pub fn identity() -> Self {
        Self {
            transition_matrix: StateMatrix::identity(),
            process_noise: StateMatrix::zeros(),
            dt: 0.0,
        }
    }

    /// Constant velocity for position plus a two-state clock (bias, drift).
    pub fn constant_velocity(dt: f64, noise: &ProcessNoise) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::contract(format!("invalid sampling period {dt}")));
        }
        let mut f = StateMatrix::identity();
        for axis in 0..3 {
            f[(POS + axis, VEL + axis)] = dt;
        }
        f[(CLOCK_BIAS, CLOCK_DRIFT)] = dt;

        let dt2 = dt * dt;
        let dt3 = dt2 * dt;
        let mut q = StateMatrix::zeros();
        let qa = noise.acceleration_psd;
        for axis in 0..3 {
            let (p, v) = (POS + axis, VEL + axis);
            q[(p, p)] = qa * dt3 / 3.0;
            q[(p, v)] = qa * dt2 / 2.0;
            q[(v, p)] = qa * dt2 / 2.0;
            q[(v, v)] = qa * dt;
        }
        let (sb, sd) = (noise.clock_bias_psd, noise.clock_drift_psd);
        q[(CLOCK_BIAS, CLOCK_BIAS)] = sb * dt + sd * dt3 / 3.0;
        q[(CLOCK_BIAS, CLOCK_DRIFT)] = sd * dt2 / 2.0;
        q[(CLOCK_DRIFT, CLOCK_BIAS)] = sd * dt2 / 2.0;
        q[(CLOCK_DRIFT, CLOCK_DRIFT)] = sd * dt;

        let model = Self {
            transition_matrix: f,
            process_noise: q,
            dt,
        };
        check_covariance(&model.process_noise)?;
        Ok(model)
    }
}

/// Time update: `x' = F x`, `P' = F P F^T + Q`.
pub fn predict(estimate: &StateEstimate, model: &TransitionModel) -> Result<StateEstimate> {
    let f = &model.transition_matrix;
    let mean = f * estimate.mean;
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { field: "mean" });
    }
    let covariance = f * estimate.covariance * f.transpose() + model.process_noise;
    if covariance.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: "covariance",
        });
    }
    Ok(StateEstimate { mean, covariance })
}
