//! Synthetic scenario: a vehicle on a straight (or circular) track under a
//! small static constellation, with scheduled NLOS corruption of selected
//! satellites.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{ProcessNoise, StateEstimate, StateMatrix, StateVector, CLOCK_BIAS, CLOCK_DRIFT, POS, VEL};
use crate::frames::{ecef_to_geodetic, enu_to_ecef_vector, geodetic_to_ecef, GeodeticDegrees, GeodeticPosition};
use crate::gnss::SatelliteObservation;
use crate::navigation::{run_filter, EpochSolution, Features, FilterConfig};
use crate::track::{TrackMap, DEFAULT_CELL_SIZE};

/// Observations of one epoch, with ground truth when it is known.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub time: f64,
    pub truth_position: Option<Vector3<f64>>,
    pub observations: Vec<SatelliteObservation>,
}

/// Serde adapter storing radians as degrees.
mod degrees {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rad: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(rad.to_degrees())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d).map(f64::to_radians)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteSpec {
    pub id: String,
    /// Radians, clockwise from north.
    #[serde(rename = "azimuth_deg", with = "degrees")]
    pub azimuth: f64,
    #[serde(rename = "elevation_deg", with = "degrees")]
    pub elevation: f64,
    /// Closed time window [start, end] in seconds with NLOS reception.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlos_interval: Option<[f64; 2]>,
}

impl SatelliteSpec {
    pub fn is_nlos_at(&self, t: f64) -> bool {
        self.nlos_interval.is_some_and(|[a, b]| a <= t && t <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// North-bound straight line.
    #[default]
    Straight,
    /// Starts north-bound and turns at constant radius; positive radius
    /// turns east, negative west.
    Arc { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialSigma {
    pub position: f64,
    pub velocity: f64,
    pub clock_bias: f64,
    pub clock_drift: f64,
}

impl Default for InitialSigma {
    fn default() -> Self {
        Self {
            position: 10.0,
            velocity: 1.0,
            clock_bias: 100.0,
            clock_drift: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub dt: f64,
    pub truth_speed: f64,
    pub origin: GeodeticPosition,
    pub satellites: Vec<SatelliteSpec>,
    pub los_noise_var: f64,
    pub nlos_noise_var: f64,
    pub multipath_range: [f64; 2],
    pub clock_bias: f64,
    pub seed: u64,
    #[serde(default)]
    pub features: Features,
    #[serde(default)]
    pub trajectory: Trajectory,
    #[serde(default = "default_cn0_los")]
    pub cn0_los: f64,
    #[serde(default = "default_cn0_nlos")]
    pub cn0_nlos: f64,
    #[serde(default = "default_satellite_range")]
    pub satellite_range: f64,
    /// Waypoint spacing of the generated track, m.
    #[serde(default = "default_track_spacing")]
    pub track_spacing: f64,
    #[serde(default)]
    pub initial_sigma: InitialSigma,
    #[serde(default)]
    pub filter: FilterConfig,
}

fn default_cn0_los() -> f64 {
    45.0
}
fn default_cn0_nlos() -> f64 {
    30.0
}
fn default_satellite_range() -> f64 {
    2.2e7
}
fn default_track_spacing() -> f64 {
    10.0
}

/// Extra track length generated before the start and after the end, m.
const TRACK_MARGIN: f64 = 200.0;

impl ScenarioConfig {
    /// Five satellites, three clear ones in the eastern sky and two western
    /// ones that are NLOS during the middle third of a 300 s run.
    ///
    /// The simulated receiver clock is constant, so the filter models it as
    /// nearly deterministic.
    pub fn standard() -> Self {
        let sat = |id: &str, az: f64, el: f64, nlos: Option<[f64; 2]>| SatelliteSpec {
            id: id.to_string(),
            azimuth: az.to_radians(),
            elevation: el.to_radians(),
            nlos_interval: nlos,
        };
        let nlos = Some([100.0, 200.0]);
        let filter = FilterConfig {
            process_noise: ProcessNoise {
                acceleration_psd: 0.1,
                clock_bias_psd: 0.01,
                clock_drift_psd: 1e-6,
            },
            ..FilterConfig::default()
        };
        Self {
            duration: 300.0,
            dt: 1.0,
            truth_speed: 10.0,
            origin: GeodeticPosition::from_degrees(50.0755, 14.4378, 250.0)
                .expect("valid origin"),
            satellites: vec![
                sat("G01", 29.0, 71.0, None),
                sat("G02", 77.0, 26.0, None),
                sat("G03", 31.0, 19.0, None),
                sat("G04", 229.0, 78.0, nlos),
                sat("G05", 264.0, 39.0, nlos),
            ],
            los_noise_var: 3.0,
            nlos_noise_var: 10.0,
            multipath_range: [5.0, 20.0],
            clock_bias: 100.0,
            seed: 1,
            features: Features::BASELINE,
            trajectory: Trajectory::Straight,
            cn0_los: default_cn0_los(),
            cn0_nlos: default_cn0_nlos(),
            satellite_range: default_satellite_range(),
            track_spacing: default_track_spacing(),
            initial_sigma: InitialSigma::default(),
            filter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::contract(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.duration, "duration")?;
        positive(self.dt, "dt")?;
        positive(self.satellite_range, "satellite range")?;
        positive(self.track_spacing, "track spacing")?;
        if !(self.truth_speed >= 0.0 && self.truth_speed.is_finite()) {
            return Err(Error::contract("truth speed must be finite and non-negative"));
        }
        if !(self.los_noise_var >= 0.0 && self.nlos_noise_var >= 0.0) {
            return Err(Error::contract("noise variances must be non-negative"));
        }
        let [lo, hi] = self.multipath_range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::contract(format!("multipath range [{lo}, {hi}] is empty")));
        }
        if self.satellites.len() < 3 {
            return Err(Error::contract(format!(
                "need at least 3 satellites, got {}",
                self.satellites.len()
            )));
        }
        if let Trajectory::Arc { radius } = self.trajectory {
            if !(radius.abs() > 0.0 && radius.is_finite()) {
                return Err(Error::contract("arc radius must be finite and non-zero"));
            }
        }
        self.origin.validate()?;
        self.filter.validate()
    }

    /// Epoch times 0, dt, 2 dt, ... up to and including `duration`.
    pub fn epoch_times(&self) -> Vec<f64> {
        let n = (self.duration / self.dt + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.dt).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Static satellite positions for the configured sky directions at `origin`.
pub fn place_satellites(config: &ScenarioConfig, origin: &GeodeticPosition) -> Result<Vec<Vector3<f64>>> {
    let base = geodetic_to_ecef(origin);
    config
        .satellites
        .iter()
        .map(|s| {
            if !(s.elevation > 0.0) {
                return Err(Error::BelowHorizon {
                    elevation: s.elevation,
                }
                .for_satellite(&s.id));
            }
            let (se, ce) = s.elevation.sin_cos();
            let (sa, ca) = s.azimuth.sin_cos();
            let enu = Vector3::new(sa * ce, ca * ce, se);
            Ok(base + enu_to_ecef_vector(&enu, origin) * config.satellite_range)
        })
        .collect()
}

/// Truth position and velocity, ECEF, at time `t`.
pub fn truth_state(config: &ScenarioConfig, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let s = config.truth_speed * t;
    let (pos_enu, vel_enu) = local_track_point(config, s);
    let base = geodetic_to_ecef(&config.origin);
    (
        base + enu_to_ecef_vector(&pos_enu, &config.origin),
        enu_to_ecef_vector(&(vel_enu * config.truth_speed), &config.origin),
    )
}

/// Point at arc length `s` along the trajectory and its unit tangent, ENU.
fn local_track_point(config: &ScenarioConfig, s: f64) -> (Vector3<f64>, Vector3<f64>) {
    match config.trajectory {
        Trajectory::Straight => (Vector3::new(0.0, s, 0.0), Vector3::y()),
        Trajectory::Arc { radius } => {
            let theta = s / radius;
            let (st, ct) = theta.sin_cos();
            (
                Vector3::new(radius * (1.0 - ct), radius * st, 0.0),
                Vector3::new(st, ct, 0.0),
            )
        }
    }
}

/// Draws the observations for time `t`.
pub struct Simulator {
    config: ScenarioConfig,
    sat_positions: Vec<Vector3<f64>>,
    los_noise: Normal<f64>,
    nlos_noise: Normal<f64>,
    multipath: Uniform<f64>,
}

impl Simulator {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let normal = |var: f64| {
            Normal::new(0.0, var.sqrt()).map_err(|e| Error::contract(format!("noise model: {e}")))
        };
        let [lo, hi] = config.multipath_range;
        Ok(Self {
            sat_positions: place_satellites(config, &config.origin)?,
            los_noise: normal(config.los_noise_var)?,
            nlos_noise: normal(config.nlos_noise_var)?,
            multipath: Uniform::new(lo, hi).map_err(|e| Error::contract(format!("multipath range: {e}")))?,
            config: config.clone(),
        })
    }

    pub fn satellite_positions(&self) -> &[Vector3<f64>] {
        &self.sat_positions
    }

    pub fn simulate_epoch<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> EpochRecord {
        let (truth, _) = truth_state(&self.config, t);
        let observations = self
            .config
            .satellites
            .iter()
            .zip(&self.sat_positions)
            .map(|(spec, sat)| {
                let range = (truth - sat).norm();
                let nlos = spec.is_nlos_at(t);
                let (noise, offset, cn0) = if nlos {
                    let noise = self.nlos_noise.sample(rng);
                    (noise, self.multipath.sample(rng), self.config.cn0_nlos)
                } else {
                    (self.los_noise.sample(rng), 0.0, self.config.cn0_los)
                };
                SatelliteObservation {
                    sat_id: spec.id.clone(),
                    pseudorange: range + self.config.clock_bias + noise + offset,
                    doppler_range_rate: None,
                    cn0,
                    sat_position: *sat,
                    sat_velocity: Vector3::zeros(),
                    sat_clock_offset: 0.0,
                    second_freq_pseudorange: None,
                    freq_pair: None,
                }
            })
            .collect();
        EpochRecord {
            time: t,
            truth_position: Some(truth),
            observations,
        }
    }
}

/// Data shared by every filter variant of one seeded run.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub epochs: Vec<EpochRecord>,
    pub initial: StateEstimate,
    /// Track waypoints in degrees; the map is built from these so a file
    /// round trip reproduces it exactly.
    pub track: Vec<GeodeticDegrees>,
    pub map: TrackMap,
}

impl GeneratedScenario {
    pub fn truth(&self) -> Vec<Vector3<f64>> {
        self.epochs
            .iter()
            .map(|e| e.truth_position.expect("simulated epochs carry truth"))
            .collect()
    }
}

pub fn track_waypoints(config: &ScenarioConfig) -> Result<Vec<GeodeticDegrees>> {
    let base = geodetic_to_ecef(&config.origin);
    let end = config.truth_speed * config.duration + TRACK_MARGIN;
    let n = ((end + TRACK_MARGIN) / config.track_spacing).ceil() as usize;
    (0..=n)
        .map(|k| {
            let s = -TRACK_MARGIN + k as f64 * config.track_spacing;
            let (p, _) = local_track_point(config, s);
            ecef_to_geodetic(&(base + enu_to_ecef_vector(&p, &config.origin))).map(GeodeticDegrees::from)
        })
        .collect()
}

/// Builds the default-cell map from degree-valued polylines.
pub fn map_from_degrees(lines: &[Vec<GeodeticDegrees>]) -> Result<TrackMap> {
    let lines = lines
        .iter()
        .map(|line| line.iter().map(|&d| GeodeticPosition::try_from(d)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    TrackMap::from_geodetic(&lines, DEFAULT_CELL_SIZE)
}

/// Diagonal initial covariance from the configured sigmas.
pub fn initial_covariance(sigma: &InitialSigma) -> StateMatrix {
    let mut d = StateVector::zeros();
    for i in 0..3 {
        d[POS + i] = sigma.position.powi(2);
        d[VEL + i] = sigma.velocity.powi(2);
    }
    d[CLOCK_BIAS] = sigma.clock_bias.powi(2);
    d[CLOCK_DRIFT] = sigma.clock_drift.powi(2);
    StateMatrix::from_diagonal(&d)
}

/// Generates the initial estimate and all epochs from `config.seed`.
pub fn generate(config: &ScenarioConfig) -> Result<GeneratedScenario> {
    let simulator = Simulator::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let covariance = initial_covariance(&config.initial_sigma);
    let (p0, v0) = truth_state(config, 0.0);
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<3>(POS).copy_from(&p0);
    mean.fixed_rows_mut::<3>(VEL).copy_from(&v0);
    mean[CLOCK_BIAS] = config.clock_bias;
    for i in 0..8 {
        mean[i] += covariance[(i, i)].sqrt() * standard.sample(&mut rng);
    }
    let initial = StateEstimate::new(mean, covariance)?;

    let epochs = config
        .epoch_times()
        .into_iter()
        .map(|t| simulator.simulate_epoch(t, &mut rng))
        .collect();
    let track = track_waypoints(config)?;
    let map = map_from_degrees(std::slice::from_ref(&track))?;
    Ok(GeneratedScenario {
        epochs,
        initial,
        track,
        map,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub features: Features,
    pub solutions: Vec<EpochSolution>,
    pub truth: Vec<Vector3<f64>>,
    pub rmse: f64,
}

pub fn rmse(estimates: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truth.len() {
        return Err(Error::contract(format!(
            "rmse needs matching non-empty series, got {} and {}",
            estimates.len(),
            truth.len()
        )));
    }
    let sum: f64 = estimates
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

/// Runs one filter variant on already generated data.
pub fn run_variant(
    data: &GeneratedScenario,
    filter: &FilterConfig,
    features: Features,
) -> Result<ScenarioRun> {
    let solutions = run_filter(&data.epochs, data.initial.clone(), filter, features, Some(&data.map))?;
    let truth = data.truth();
    let positions: Vec<_> = solutions.iter().map(|s| s.estimate.position()).collect();
    let rmse = rmse(&positions, &truth)?;
    Ok(ScenarioRun {
        features,
        solutions,
        truth,
        rmse,
    })
}

/// Generates data from the config and runs its configured feature set.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    let data = generate(config)?;
    run_variant(&data, &config.filter, config.features)
}

/// RMSE per feature combination, laid out as rows (with mixing, without
/// mixing) by columns (without constraint, with constraint).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseGrid {
    pub cells: [[f64; 2]; 2],
}

impl RmseGrid {
    pub fn get(&self, features: Features) -> f64 {
        let row = usize::from(!features.mixing);
        let col = usize::from(features.soft_constraint);
        self.cells[row][col]
    }

    fn set(&mut self, features: Features, value: f64) {
        let row = usize::from(!features.mixing);
        let col = usize::from(features.soft_constraint);
        self.cells[row][col] = value;
    }

    /// mixing+constraint < mixing < constraint < baseline.
    pub fn ordering_holds(&self) -> bool {
        Features::ALL
            .windows(2)
            .all(|w| self.get(w[0]) < self.get(w[1]))
    }
}

pub fn rmse_grid(config: &ScenarioConfig) -> Result<RmseGrid> {
    let data = generate(config)?;
    let mut grid = RmseGrid { cells: [[0.0; 2]; 2] };
    for features in Features::ALL {
        grid.set(features, run_variant(&data, &config.filter, features)?.rmse);
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub seeds: Vec<u64>,
    pub grids: Vec<RmseGrid>,
}

impl GridSummary {
    pub fn mean(&self) -> RmseGrid {
        let mut out = RmseGrid { cells: [[0.0; 2]; 2] };
        let n = self.grids.len().max(1) as f64;
        for g in &self.grids {
            for (r, row) in g.cells.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    out.cells[r][c] += v / n;
                }
            }
        }
        out
    }

    /// Share of seeds whose grid satisfies [`RmseGrid::ordering_holds`].
    pub fn ordering_fraction(&self) -> f64 {
        let hits = self.grids.iter().filter(|g| g.ordering_holds()).count();
        hits as f64 / self.grids.len().max(1) as f64
    }
}

/// RMSE grids for seeds `config.seed .. config.seed + count`, in parallel.
pub fn multi_seed_grid(config: &ScenarioConfig, count: usize) -> Result<GridSummary> {
    let seeds: Vec<u64> = (0..count as u64).map(|k| config.seed.wrapping_add(k)).collect();
    let grids = seeds
        .par_iter()
        .map(|&seed| rmse_grid(&config.with_seed(seed)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridSummary { seeds, grids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnss::elevation_angle;

    fn quiet() -> ScenarioConfig {
        let mut c = ScenarioConfig::standard();
        c.los_noise_var = 0.0;
        c.nlos_noise_var = 0.0;
        c.clock_bias = 0.0;
        for s in &mut c.satellites {
            s.nlos_interval = None;
        }
        c
    }

    #[test]
    fn satellites_at_fixed_range_and_direction() {
        let mut c = ScenarioConfig::standard();
        c.satellites[0].elevation = std::f64::consts::FRAC_PI_2;
        let base = geodetic_to_ecef(&c.origin);
        let sats = place_satellites(&c, &c.origin).unwrap();
        for s in &sats {
            assert!(((s - base).norm() - 2.2e7).abs() < 1e-6);
        }
        let el = elevation_angle(&base, &sats[0]).unwrap();
        assert!((el - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        for (spec, s) in c.satellites.iter().zip(&sats).skip(1) {
            assert!((elevation_angle(&base, s).unwrap() - spec.elevation).abs() < 1e-9);
        }
    }

    #[test]
    fn north_low_satellite_direction() {
        let mut c = ScenarioConfig::standard();
        c.origin = GeodeticPosition::new(0.0, 0.0, 0.0).unwrap();
        c.satellites[0].azimuth = 0.0;
        c.satellites[0].elevation = 0.1;
        let sats = place_satellites(&c, &c.origin).unwrap();
        let dir = (sats[0] - geodetic_to_ecef(&c.origin)) / 2.2e7;
        // At (0, 0) east = +y, north = +z, up = +x.
        assert!((dir - Vector3::new(0.1f64.sin(), 0.0, 0.1f64.cos())).norm() < 1e-12);
    }

    #[test]
    fn satellite_below_horizon_rejected() {
        let mut c = ScenarioConfig::standard();
        c.satellites[2].elevation = -0.01;
        assert!(matches!(
            place_satellites(&c, &c.origin),
            Err(Error::Satellite { .. })
        ));
    }

    #[test]
    fn noise_free_pseudorange_is_geometric() {
        let c = quiet();
        let sim = Simulator::new(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = sim.simulate_epoch(42.0, &mut rng);
        let truth = e.truth_position.unwrap();
        for o in &e.observations {
            assert_eq!(o.pseudorange, (truth - o.sat_position).norm());
            assert_eq!(o.cn0, 45.0);
            assert!(o.doppler_range_rate.is_none());
        }

        let mut biased = c.clone();
        biased.clock_bias = 100.0;
        let sim_b = Simulator::new(&biased).unwrap();
        let eb = sim_b.simulate_epoch(42.0, &mut rng);
        for (a, b) in e.observations.iter().zip(&eb.observations) {
            assert_eq!(b.pseudorange - a.pseudorange, 100.0);
        }
    }

    #[test]
    fn truth_moves_north() {
        let c = ScenarioConfig::standard();
        let (p0, v) = truth_state(&c, 0.0);
        let (p1, _) = truth_state(&c, 10.0);
        let north = enu_to_ecef_vector(&Vector3::y(), &c.origin);
        assert!((p1 - p0 - north * 100.0).norm() < 1e-6);
        assert!((v - north * 10.0).norm() < 1e-12);
    }

    #[test]
    fn arc_keeps_constant_radius() {
        let mut c = ScenarioConfig::standard();
        c.trajectory = Trajectory::Arc { radius: 300.0 };
        for s in [0.0, 50.0, 400.0] {
            let (p, t) = local_track_point(&c, s);
            assert!(((p - Vector3::new(300.0, 0.0, 0.0)).norm() - 300.0).abs() < 1e-9);
            assert!((t.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn epoch_grid_includes_end() {
        let c = ScenarioConfig::standard();
        let t = c.epoch_times();
        assert_eq!(t.len(), 301);
        assert_eq!(*t.last().unwrap(), 300.0);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ScenarioConfig::standard();
        c.satellites.truncate(2);
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::standard();
        c.multipath_range = [20.0, 5.0];
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::standard();
        c.dt = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn truth_lies_on_generated_track() {
        let mut c = quiet();
        c.duration = 20.0;
        let data = generate(&c).unwrap();
        for p in data.truth() {
            assert!(data.map.distance_to_track(&p) < 1e-6);
        }
    }

    #[test]
    fn grid_layout() {
        let mut g = RmseGrid { cells: [[0.0; 2]; 2] };
        g.set(Features::MIXING_CONSTRAINT, 6.0);
        g.set(Features::MIXING, 6.8);
        g.set(Features::CONSTRAINT, 9.7);
        g.set(Features::BASELINE, 13.3);
        assert_eq!(g.cells, [[6.8, 6.0], [13.3, 9.7]]);
        assert!(g.ordering_holds());
        g.set(Features::MIXING, 10.0);
        assert!(!g.ordering_holds());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = ScenarioConfig::standard();
        let text = toml::to_string(&c).unwrap();
        assert!(text.contains("azimuth_deg"));
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.satellites.len(), c.satellites.len());
        for (a, b) in back.satellites.iter().zip(&c.satellites) {
            assert!((a.azimuth - b.azimuth).abs() < 1e-12);
            assert_eq!(a.nlos_interval, b.nlos_interval);
        }
        assert!((back.origin.latitude - c.origin.latitude).abs() < 1e-12);
        assert_eq!(back.filter, c.filter);
    }
}
