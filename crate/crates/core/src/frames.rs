//! WGS-84 conversions between ECEF, geodetic and local east-north-up frames.
//!
//! Angles are radians everywhere in this module. Degrees only appear at the
//! file-format boundary (see [`GeodeticDegrees`]).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS-84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 first eccentricity squared.
pub const WGS84_E2: f64 = 0.006_694_379_99;

const MIN_GEOCENTRIC_NORM: f64 = 1.0e5;
const LATITUDE_TOLERANCE: f64 = 1.0e-12;
const MAX_LATITUDE_ITERATIONS: usize = 20;

/// Serialized through [`GeodeticDegrees`], so files carry degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeodeticDegrees", into = "GeodeticDegrees")]
pub struct GeodeticPosition {
    /// Geodetic latitude, radians.
    pub latitude: f64,
    /// Longitude, radians.
    pub longitude: f64,
    /// Height above the ellipsoid, meters.
    pub height: f64,
}

impl GeodeticPosition {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self> {
        let g = Self {
            latitude,
            longitude,
            height,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_degrees(latitude_deg: f64, longitude_deg: f64, height: f64) -> Result<Self> {
        Self::new(latitude_deg.to_radians(), longitude_deg.to_radians(), height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latitude.is_finite() && self.longitude.is_finite() && self.height.is_finite()) {
            return Err(Error::NonFinite {
                field: "geodetic position",
            });
        }
        if self.latitude.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::contract(format!(
                "latitude {} rad outside [-pi/2, pi/2]",
                self.latitude
            )));
        }
        if self.longitude.abs() > std::f64::consts::PI {
            return Err(Error::contract(format!(
                "longitude {} rad outside [-pi, pi]",
                self.longitude
            )));
        }
        Ok(())
    }
}

/// Degree-valued mirror of [`GeodeticPosition`] used in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticDegrees {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default)]
    pub height_m: f64,
}

impl TryFrom<GeodeticDegrees> for GeodeticPosition {
    type Error = Error;

    fn try_from(d: GeodeticDegrees) -> Result<Self> {
        GeodeticPosition::from_degrees(d.latitude_deg, d.longitude_deg, d.height_m)
    }
}

impl From<GeodeticPosition> for GeodeticDegrees {
    fn from(g: GeodeticPosition) -> Self {
        Self {
            latitude_deg: g.latitude.to_degrees(),
            longitude_deg: g.longitude.to_degrees(),
            height_m: g.height,
        }
    }
}

/// Prime-vertical radius of curvature at geodetic latitude `latitude`.
fn prime_vertical_radius(latitude: f64) -> f64 {
    let s = latitude.sin();
    WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt()
}

pub fn geodetic_to_ecef(g: &GeodeticPosition) -> Vector3<f64> {
    let rn = prime_vertical_radius(g.latitude);
    let (sin_lat, cos_lat) = g.latitude.sin_cos();
    let (sin_lon, cos_lon) = g.longitude.sin_cos();
    Vector3::new(
        (rn + g.height) * cos_lat * cos_lon,
        (rn + g.height) * cos_lat * sin_lon,
        (rn + g.height - WGS84_E2 * rn) * sin_lat,
    )
}

/// Inverse of [`geodetic_to_ecef`] by fixed-point iteration on latitude.
pub fn ecef_to_geodetic(p: &Vector3<f64>) -> Result<GeodeticPosition> {
    let norm = p.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            field: "ECEF position",
        });
    }
    if norm <= MIN_GEOCENTRIC_NORM {
        return Err(Error::DegeneratePosition { norm });
    }
    let rho = p.x.hypot(p.y);
    let longitude = p.y.atan2(p.x);

    let mut latitude = p.z.atan2(rho);
    for _ in 0..MAX_LATITUDE_ITERATIONS {
        let rn = prime_vertical_radius(latitude);
        let next = (p.z + WGS84_E2 * rn * latitude.sin()).atan2(rho);
        let step = (next - latitude).abs();
        latitude = next;
        if step < LATITUDE_TOLERANCE {
            break;
        }
    }

    // Height along the ellipsoid normal; well conditioned at the poles too.
    let rn = prime_vertical_radius(latitude);
    let (sin_lat, cos_lat) = latitude.sin_cos();
    let height = rho * cos_lat + (p.z + WGS84_E2 * rn * sin_lat) * sin_lat - rn;

    Ok(GeodeticPosition {
        latitude,
        longitude,
        height,
    })
}

/// Rotation taking ECEF vectors into the local ENU frame at `g`.
pub fn enu_rotation(g: &GeodeticPosition) -> Matrix3<f64> {
    let (sin_lat, cos_lat) = g.latitude.sin_cos();
    let (sin_lon, cos_lon) = g.longitude.sin_cos();
    Matrix3::new(
        -sin_lon,
        cos_lon,
        0.0,
        -cos_lon * sin_lat,
        -sin_lon * sin_lat,
        cos_lat,
        cos_lon * cos_lat,
        sin_lon * cos_lat,
        sin_lat,
    )
}

pub fn ecef_to_enu_vector(v: &Vector3<f64>, g: &GeodeticPosition) -> Vector3<f64> {
    enu_rotation(g) * v
}

pub fn enu_to_ecef_vector(v: &Vector3<f64>, g: &GeodeticPosition) -> Vector3<f64> {
    enu_rotation(g).transpose() * v
}

/// Rotates a 3x3 ECEF covariance into ENU: `T S T^T`.
pub fn ecef_cov_to_enu(s: &Matrix3<f64>, g: &GeodeticPosition) -> Result<Matrix3<f64>> {
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if (s - s.transpose()).amax() > 1e-9 * scale {
        return Err(Error::contract("covariance is not symmetric"));
    }
    let t = enu_rotation(g);
    Ok(t * s * t.transpose())
}
