//! Shared generators and reference implementations for integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

use tramnav::estimation::{Jacobian, StateMatrix, StateVector, STATE_DIM};
use tramnav::frames::{enu_to_ecef_vector, geodetic_to_ecef, GeodeticPosition};
use tramnav::track::{TrackMap, DEFAULT_CELL_SIZE};

/// Random symmetric positive definite matrix with eigenvalues roughly in
/// `[floor, floor + scale]`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, scale: f64, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = &a * a.transpose() * (scale / n as f64) + DMatrix::identity(n, n) * floor;
    (&p + p.transpose()) * 0.5
}

pub fn random_state_matrix<R: Rng>(rng: &mut R, scale: f64, floor: f64) -> StateMatrix {
    let p = random_spd(rng, STATE_DIM, scale, floor);
    StateMatrix::from_fn(|i, j| p[(i, j)])
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn random_state<R: Rng>(rng: &mut R, scale: f64) -> StateVector {
    StateVector::from_fn(|_, _| rng.random_range(-scale..scale))
}

pub fn random_jacobian<R: Rng>(rng: &mut R, m: usize) -> Jacobian {
    Jacobian::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
}

/// Textbook Kalman update, written with explicit inverses.
pub fn kalman_oracle(
    x: &StateVector,
    p: &StateMatrix,
    h: &DMatrix<f64>,
    offset: &DVector<f64>,
    r: &DMatrix<f64>,
    z: &DVector<f64>,
) -> (StateVector, StateMatrix) {
    let pd = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, p.as_slice());
    let xd = DVector::from_column_slice(x.as_slice());
    let s = h * &pd * h.transpose() + r;
    let k = &pd * h.transpose() * s.try_inverse().expect("invertible innovation covariance");
    let xn = &xd + &k * (z - h * &xd - offset);
    let pn = (DMatrix::identity(STATE_DIM, STATE_DIM) - &k * h) * &pd;
    let pn = (&pn + pn.transpose()) * 0.5;
    (
        StateVector::from_column_slice(xn.as_slice()),
        StateMatrix::from_column_slice(pn.as_slice()),
    )
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

pub struct Geometry {
    pub site: GeodeticPosition,
    pub receiver: Vector3<f64>,
    pub satellite: Vector3<f64>,
    pub sat_velocity: Vector3<f64>,
}

/// Receiver near the surface and a satellite 20,000 km away above 10 deg.
pub fn random_geometry<R: Rng>(rng: &mut R) -> Geometry {
    let site = GeodeticPosition::from_degrees(
        rng.random_range(-80.0..80.0),
        rng.random_range(-180.0..180.0),
        rng.random_range(0.0..2000.0),
    )
    .unwrap();
    let receiver = geodetic_to_ecef(&site);
    let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.random_range(10f64.to_radians()..89f64.to_radians());
    let dir = Vector3::new(az.sin() * el.cos(), az.cos() * el.cos(), el.sin());
    let satellite = receiver + enu_to_ecef_vector(&dir, &site) * 2.0e7;
    let sat_velocity = Vector3::from_fn(|_, _| rng.random_range(-3000.0..3000.0));
    Geometry {
        site,
        receiver,
        satellite,
        sat_velocity,
    }
}

/// Random-walk polylines of 20 m segments inside a square of `extent`
/// metres around a mid-latitude site.
pub fn random_track_map<R: Rng>(rng: &mut R, lines: usize, segments: usize, extent: f64) -> (TrackMap, GeodeticPosition) {
    let site = GeodeticPosition::from_degrees(50.08, 14.44, 250.0).unwrap();
    let base = geodetic_to_ecef(&site);
    let polylines = (0..lines)
        .map(|_| {
            let mut p = Vector3::new(
                rng.random_range(-extent / 2.0..extent / 2.0),
                rng.random_range(-extent / 2.0..extent / 2.0),
                0.0,
            );
            let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut line = vec![base + enu_to_ecef_vector(&p, &site)];
            for _ in 0..segments {
                heading += rng.random_range(-0.3..0.3);
                p += Vector3::new(heading.sin(), heading.cos(), 0.0) * 20.0;
                p.z = (p.z + rng.random_range(-0.5..0.5)).clamp(-5.0, 5.0);
                line.push(base + enu_to_ecef_vector(&p, &site));
            }
            line
        })
        .collect();
    (TrackMap::build(polylines, DEFAULT_CELL_SIZE).unwrap(), site)
}

/// Random ECEF point within `extent / 2 + margin` of the site horizontally.
pub fn random_query<R: Rng>(rng: &mut R, site: &GeodeticPosition, extent: f64, margin: f64) -> Vector3<f64> {
    let half = extent / 2.0 + margin;
    let local = Vector3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-30.0..30.0),
    );
    geodetic_to_ecef(site) + enu_to_ecef_vector(&local, site)
}
