//! Per-satellite distribution mixing.
//!
//! Each measured pseudorange `N(z_m, R_m)` is blended with the filter's
//! prediction `N(z_p, R_p)` into a single moment-matched Gaussian. The
//! weights are the normalized precisions:
//!
//! ```text
//! mu_a = R_m^-1 / (R_m^-1 + R_p^-1),   mu_b = 1 - mu_a
//! z    = mu_a z_m + mu_b z_p
//! R    = mu_a (R_m + (z_m - z)^2) + mu_b (R_p + (z_p - z)^2)
//! ```
//!
//! Large disagreement between measurement and prediction therefore inflates
//! the mixed variance. Only pseudoranges are mixed.

use nalgebra::{SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::estimation::{StateEstimate, POS};
use crate::gnss::{line_of_sight, pseudorange_predict, CorrectedObservation};

/// Lower bound applied to both variances before inversion, m^2.
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedMeasurement {
    pub mean: f64,
    pub variance: f64,
    pub weight_measurement: f64,
    pub weight_prediction: f64,
}

/// `L^T P_pos L` with `P_pos` the position block of `covariance`.
pub fn predicted_measurement_variance(
    los: &Vector3<f64>,
    covariance: &SMatrix<f64, 8, 8>,
) -> Result<f64> {
    let p = covariance.fixed_view::<3, 3>(POS, POS).into_owned();
    let trace = p.trace();
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: "position covariance",
        });
    }
    let min_eigenvalue = ((p + p.transpose()) * 0.5).symmetric_eigenvalues().min();
    if min_eigenvalue < -1e-9 * trace.abs() {
        return Err(Error::contract(format!(
            "position covariance is not PSD (min eigenvalue {min_eigenvalue:e})"
        )));
    }
    Ok((los.transpose() * p * los)[0])
}

pub fn mix(measured: f64, var_measured: f64, predicted: f64, var_predicted: f64) -> Result<MixedMeasurement> {
    if !(var_measured > 0.0 && var_predicted > 0.0) {
        return Err(Error::contract(format!(
            "mixing needs positive variances, got {var_measured} and {var_predicted}"
        )));
    }
    if !(measured.is_finite() && predicted.is_finite() && var_measured.is_finite() && var_predicted.is_finite()) {
        return Err(Error::NonFinite {
            field: "mixing input",
        });
    }
    let rm = var_measured.max(VARIANCE_FLOOR);
    let rp = var_predicted.max(VARIANCE_FLOOR);
    let (im, ip) = (rm.recip(), rp.recip());
    let weight_measurement = im / (im + ip);
    let weight_prediction = 1.0 - weight_measurement;
    let mean = predicted + weight_measurement * (measured - predicted);
    let variance = weight_measurement * (rm + (measured - mean).powi(2))
        + weight_prediction * (rp + (predicted - mean).powi(2));
    Ok(MixedMeasurement {
        mean,
        variance,
        weight_measurement,
        weight_prediction,
    })
}

/// Mixes every satellite independently against the prediction from `prior`.
pub fn mix_epoch(
    observations: &[CorrectedObservation],
    prior: &StateEstimate,
) -> Result<Vec<MixedMeasurement>> {
    let position = prior.position();
    observations
        .iter()
        .map(|obs| {
            let tag = |e: Error| e.for_satellite(&obs.sat_id);
            let predicted = pseudorange_predict(&prior.mean, &obs.sat_position).map_err(tag)?;
            let los = line_of_sight(&position, &obs.sat_position).map_err(tag)?;
            let var_predicted = predicted_measurement_variance(&los, &prior.covariance).map_err(tag)?;
            mix(obs.corrected_pseudorange, obs.variance, predicted, var_predicted).map_err(tag)
        })
        .collect()
}
