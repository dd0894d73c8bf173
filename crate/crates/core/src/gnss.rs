//! Pseudorange and Doppler observation models.
//!
//! Pseudorange predictor: `|p_r - p_sat| + c*dt_r`. Range-rate predictor:
//! `(v_sat - v_r) . L + c*dt_r_dot` with the line of sight
//! `L = (p_r - p_sat) / |p_r - p_sat|`.
//!
//! The Doppler Jacobian is the exact derivative of its predictor. The
//! velocity partial is `-L`, and the position partial
//! `(I - L L^T)(v_sat - v_r) / r` is included; it vanishes when the
//! relative velocity is along the line of sight.
//!
//! Tropospheric delay is not modelled.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::estimation::{
    Jacobian, MeasurementBlock, MeasurementModel, StateVector, CLOCK_BIAS, CLOCK_DRIFT, POS, VEL,
};
use crate::error::{Error, Result};
use crate::frames::{ecef_to_enu_vector, ecef_to_geodetic};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

// Weighting model constants.
const CN0_THRESHOLD: f64 = 50.0;
const CN0_FLOOR: f64 = 10.0;
const VARIANCE_AT_FLOOR: f64 = 30.0;
const CN0_SLOPE: f64 = 40.0;

const SAT_RADIUS_BAND: (f64, f64) = (2.0e7, 4.5e7);
const RECEIVER_RADIUS_BAND: (f64, f64) = (6.2e6, 6.5e6);

/// One satellite's raw observables for an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteObservation {
    pub sat_id: String,
    /// Code pseudorange on the primary frequency, m.
    pub pseudorange: f64,
    /// Doppler expressed as range rate, m/s.
    pub doppler_range_rate: Option<f64>,
    /// Carrier-to-noise density, dB-Hz.
    pub cn0: f64,
    pub sat_position: Vector3<f64>,
    pub sat_velocity: Vector3<f64>,
    /// Broadcast satellite clock offset, s.
    pub sat_clock_offset: f64,
    pub second_freq_pseudorange: Option<f64>,
    /// Carrier frequencies (f1, f2), Hz.
    pub freq_pair: Option<(f64, f64)>,
}

impl SatelliteObservation {
    pub fn validate(&self) -> Result<()> {
        let finite = self.pseudorange.is_finite()
            && self.cn0.is_finite()
            && self.sat_clock_offset.is_finite()
            && self.sat_position.iter().all(|v| v.is_finite())
            && self.sat_velocity.iter().all(|v| v.is_finite())
            && self.doppler_range_rate.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::NonFinite {
                field: "satellite observation",
            }
            .for_satellite(&self.sat_id));
        }
        if self.pseudorange <= 0.0 {
            return Err(Error::contract("pseudorange must be positive").for_satellite(&self.sat_id));
        }
        let r = self.sat_position.norm();
        if r < SAT_RADIUS_BAND.0 || r > SAT_RADIUS_BAND.1 {
            return Err(Error::contract(format!("satellite radius {r} m outside sanity band"))
                .for_satellite(&self.sat_id));
        }
        if !(0.0..=60.0).contains(&self.cn0) {
            return Err(Error::contract(format!("CN0 {} dB-Hz outside [0, 60]", self.cn0))
                .for_satellite(&self.sat_id));
        }
        Ok(())
    }
}

/// Observation after deterministic corrections, ready for the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedObservation {
    pub sat_id: String,
    pub sat_position: Vector3<f64>,
    pub sat_velocity: Vector3<f64>,
    /// Pseudorange with satellite clock (incl. relativistic term) and
    /// first-order ionosphere removed, m.
    pub corrected_pseudorange: f64,
    pub range_rate: Option<f64>,
    /// Pseudorange noise variance from the CN0/elevation model, m^2.
    pub variance: f64,
    pub elevation: f64,
    pub line_of_sight: Vector3<f64>,
}

pub fn line_of_sight(receiver: &Vector3<f64>, satellite: &Vector3<f64>) -> Result<Vector3<f64>> {
    let d = receiver - satellite;
    let n = d.norm();
    if !n.is_finite() {
        return Err(Error::NonFinite {
            field: "line of sight",
        });
    }
    if n == 0.0 {
        return Err(Error::DegenerateGeometry("receiver and satellite coincide"));
    }
    Ok(d / n)
}

/// Relativistic satellite clock term `-2 (p . v) / c^2`, seconds.
pub fn relativistic_clock_correction(sat_position: &Vector3<f64>, sat_velocity: &Vector3<f64>) -> f64 {
    -2.0 * sat_position.dot(sat_velocity) / (SPEED_OF_LIGHT * SPEED_OF_LIGHT)
}

/// Dual-frequency ionosphere-free pseudorange combination.
pub fn iono_free_pseudorange(rho1: f64, rho2: f64, f1: f64, f2: f64) -> Result<f64> {
    if !(f1 > 0.0 && f2 > 0.0) {
        return Err(Error::contract("carrier frequencies must be positive"));
    }
    if f1 == f2 {
        return Err(Error::DegenerateFrequency(f1));
    }
    let (f1s, f2s) = (f1 * f1, f2 * f2);
    Ok((f1s * rho1 - f2s * rho2) / (f1s - f2s))
}

fn position_of(x: &StateVector) -> Vector3<f64> {
    x.fixed_rows::<3>(POS).into_owned()
}

fn velocity_of(x: &StateVector) -> Vector3<f64> {
    x.fixed_rows::<3>(VEL).into_owned()
}

pub fn pseudorange_predict(x: &StateVector, sat_position: &Vector3<f64>) -> Result<f64> {
    let d = position_of(x) - sat_position;
    let range = d.norm();
    if range == 0.0 {
        return Err(Error::DegenerateGeometry("receiver and satellite coincide"));
    }
    Ok(range + x[CLOCK_BIAS])
}

pub fn pseudorange_jacobian_row(x: &StateVector, sat_position: &Vector3<f64>) -> Result<[f64; 8]> {
    let l = line_of_sight(&position_of(x), sat_position)?;
    Ok([l.x, l.y, l.z, 0.0, 0.0, 0.0, 1.0, 0.0])
}

pub fn doppler_predict(
    x: &StateVector,
    sat_position: &Vector3<f64>,
    sat_velocity: &Vector3<f64>,
) -> Result<f64> {
    let l = line_of_sight(&position_of(x), sat_position)?;
    Ok((sat_velocity - velocity_of(x)).dot(&l) + x[CLOCK_DRIFT])
}

pub fn doppler_jacobian_row(
    x: &StateVector,
    sat_position: &Vector3<f64>,
    sat_velocity: &Vector3<f64>,
) -> Result<[f64; 8]> {
    let p = position_of(x);
    let l = line_of_sight(&p, sat_position)?;
    let range = (p - sat_position).norm();
    let relative = sat_velocity - velocity_of(x);
    let dpos = (Matrix3::identity() - l * l.transpose()) * relative / range;
    Ok([dpos.x, dpos.y, dpos.z, -l.x, -l.y, -l.z, 0.0, 1.0])
}

/// Pseudorange variance from CN0 (dB-Hz) and elevation (rad), m^2.
pub fn measurement_variance(cn0: f64, elevation: f64) -> Result<f64> {
    if !cn0.is_finite() || !elevation.is_finite() {
        return Err(Error::NonFinite {
            field: "CN0 or elevation",
        });
    }
    if elevation <= 0.0 {
        return Err(Error::BelowHorizon { elevation });
    }
    if elevation > FRAC_PI_2 + 1e-12 {
        return Err(Error::contract(format!("elevation {elevation} rad above zenith")));
    }
    let (t, f, a, slope) = (CN0_THRESHOLD, CN0_FLOOR, VARIANCE_AT_FLOOR, CN0_SLOPE);
    let decay = 10f64.powf(-(cn0 - t) / slope);
    let floor_decay = 10f64.powf(-(f - t) / slope);
    let numerator = decay * ((a / floor_decay - 1.0) * (cn0 - t) / (f - t) + 1.0);
    let s = elevation.sin();
    Ok(numerator / (s * s))
}

/// Elevation of `p_sat` above the local tangent plane at `p_r`.
pub fn elevation_angle(receiver: &Vector3<f64>, satellite: &Vector3<f64>) -> Result<f64> {
    let r = receiver.norm();
    if !(RECEIVER_RADIUS_BAND.0..=RECEIVER_RADIUS_BAND.1).contains(&r) {
        return Err(Error::contract(format!(
            "receiver radius {r} m is not near the Earth's surface"
        )));
    }
    let to_sat = -line_of_sight(receiver, satellite)?;
    let g = ecef_to_geodetic(receiver)?;
    let enu = ecef_to_enu_vector(&to_sat, &g);
    Ok(enu.z.clamp(-1.0, 1.0).asin())
}

/// Applies satellite clock, relativistic and ionosphere corrections and
/// evaluates the weighting model at the receiver position `receiver`.
pub fn correct_observation(
    obs: &SatelliteObservation,
    receiver: &Vector3<f64>,
) -> Result<CorrectedObservation> {
    let tag = |e: Error| e.for_satellite(&obs.sat_id);
    obs.validate()?;
    let primary = match (obs.second_freq_pseudorange, obs.freq_pair) {
        (Some(rho2), Some((f1, f2))) => iono_free_pseudorange(obs.pseudorange, rho2, f1, f2).map_err(tag)?,
        _ => obs.pseudorange,
    };
    let sat_clock =
        obs.sat_clock_offset + relativistic_clock_correction(&obs.sat_position, &obs.sat_velocity);
    let line_of_sight = line_of_sight(receiver, &obs.sat_position).map_err(tag)?;
    let elevation = elevation_angle(receiver, &obs.sat_position).map_err(tag)?;
    let variance = measurement_variance(obs.cn0, elevation).map_err(tag)?;
    Ok(CorrectedObservation {
        sat_id: obs.sat_id.clone(),
        sat_position: obs.sat_position,
        sat_velocity: obs.sat_velocity,
        corrected_pseudorange: primary + SPEED_OF_LIGHT * sat_clock,
        range_rate: obs.doppler_range_rate,
        variance,
        elevation,
        line_of_sight,
    })
}

/// Stacked pseudorange predictor for a set of satellites.
#[derive(Debug, Clone)]
pub struct PseudorangeModel {
    pub sat_positions: Vec<Vector3<f64>>,
}

impl MeasurementModel for PseudorangeModel {
    fn dim(&self) -> usize {
        self.sat_positions.len()
    }

    fn predict(&self, x: &StateVector) -> Result<DVector<f64>> {
        let values = self
            .sat_positions
            .iter()
            .map(|s| pseudorange_predict(x, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(values))
    }

    fn jacobian(&self, x: &StateVector) -> Result<Jacobian> {
        let mut g = Jacobian::zeros(self.sat_positions.len());
        for (i, s) in self.sat_positions.iter().enumerate() {
            let row = pseudorange_jacobian_row(x, s)?;
            for (j, v) in row.iter().enumerate() {
                g[(i, j)] = *v;
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct DopplerModel {
    pub sat_positions: Vec<Vector3<f64>>,
    pub sat_velocities: Vec<Vector3<f64>>,
}

impl MeasurementModel for DopplerModel {
    fn dim(&self) -> usize {
        self.sat_positions.len()
    }

    fn predict(&self, x: &StateVector) -> Result<DVector<f64>> {
        let values = self
            .sat_positions
            .iter()
            .zip(&self.sat_velocities)
            .map(|(p, v)| doppler_predict(x, p, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(values))
    }

    fn jacobian(&self, x: &StateVector) -> Result<Jacobian> {
        let mut g = Jacobian::zeros(self.sat_positions.len());
        for (i, (p, v)) in self.sat_positions.iter().zip(&self.sat_velocities).enumerate() {
            let row = doppler_jacobian_row(x, p, v)?;
            for (j, value) in row.iter().enumerate() {
                g[(i, j)] = *value;
            }
        }
        Ok(g)
    }
}

/// Pseudorange block with independent noise of the given variances.
pub fn pseudorange_block(
    sat_positions: Vec<Vector3<f64>>,
    values: Vec<f64>,
    variances: &[f64],
) -> Result<MeasurementBlock> {
    let model = PseudorangeModel { sat_positions };
    MeasurementBlock::new(
        "pseudorange",
        DVector::from_vec(values),
        DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        Arc::new(model),
    )
}

pub fn doppler_block(
    sat_positions: Vec<Vector3<f64>>,
    sat_velocities: Vec<Vector3<f64>>,
    values: Vec<f64>,
    variance: f64,
) -> Result<MeasurementBlock> {
    let m = values.len();
    let model = DopplerModel {
        sat_positions,
        sat_velocities,
    };
    MeasurementBlock::new(
        "doppler",
        DVector::from_vec(values),
        DMatrix::identity(m, m) * variance,
        Arc::new(model),
    )
}

/// Unweighted single-epoch Gauss-Newton fix for position and clock bias.
///
/// Starts from the geocenter; needs at least four satellites.
pub fn least_squares_fix(
    sat_positions: &[Vector3<f64>],
    pseudoranges: &[f64],
) -> Result<(Vector3<f64>, f64)> {
    let m = sat_positions.len();
    if m < 4 || pseudoranges.len() != m {
        return Err(Error::contract(format!(
            "least-squares fix needs >= 4 matched satellites, got {m}"
        )));
    }
    let mut position = Vector3::zeros();
    let mut bias = 0.0;
    for _ in 0..30 {
        let mut h = DMatrix::zeros(m, 4);
        let mut residual = DVector::zeros(m);
        for (i, (sat, rho)) in sat_positions.iter().zip(pseudoranges).enumerate() {
            let l = line_of_sight(&position, sat)?;
            residual[i] = rho - ((position - sat).norm() + bias);
            h[(i, 0)] = l.x;
            h[(i, 1)] = l.y;
            h[(i, 2)] = l.z;
            h[(i, 3)] = 1.0;
        }
        let normal = h.transpose() * &h;
        let rhs = h.transpose() * residual;
        let step = normal
            .cholesky()
            .ok_or(Error::SingularMatrix {
                what: "least-squares normal matrix",
            })?
            .solve(&rhs);
        position += Vector3::new(step[0], step[1], step[2]);
        bias += step[3];
        if step.norm() < 1e-6 {
            break;
        }
    }
    Ok((position, bias))
}
