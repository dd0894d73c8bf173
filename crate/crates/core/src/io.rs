//! File formats: observation epochs, truth, trajectories, initial state,
//! GeoJSON track polylines and evaluation metrics.
//!
//! All delimited files are comma separated with a header row. Floats are
//! written with 17 significant digits so every writer/loader pair round-trips
//! bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error;
use crate::estimation::{StateEstimate, StateMatrix, StateVector};
use crate::frames::{ecef_cov_to_enu, ecef_to_geodetic, GeodeticDegrees};
use crate::gnss::SatelliteObservation;
use crate::navigation::EpochSolution;
use crate::sim::{map_from_degrees, EpochRecord};
use crate::track::TrackMap;

pub const OBSERVATION_COLUMNS: [&str; 12] = [
    "epoch_time",
    "sat_id",
    "pseudorange_m",
    "doppler_mps",
    "cn0_dbhz",
    "sat_x_m",
    "sat_y_m",
    "sat_z_m",
    "sat_vx_mps",
    "sat_vy_mps",
    "sat_vz_mps",
    "sat_clk_s",
];

pub const TRUTH_COLUMNS: [&str; 4] = ["epoch_time", "x_m", "y_m", "z_m"];

pub const TRAJECTORY_COLUMNS: [&str; 10] = [
    "epoch_time",
    "x_m",
    "y_m",
    "z_m",
    "sd_e_m",
    "sd_n_m",
    "sd_u_m",
    "converged",
    "iterations",
    "distance_to_track_m",
];

const OBSERVATION_MAGIC: &str = "tramnav-observations";
const OBSERVATION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: file not found")]
    Missing { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad header: {message}")]
    BadHeader {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: epoch time {found} precedes {previous}")]
    NonMonotone {
        path: PathBuf,
        line: u64,
        previous: f64,
        found: f64,
    },
    #[error("{path}:{line}: non-finite value in column {column}")]
    NonFinite {
        path: PathBuf,
        line: u64,
        column: &'static str,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: no line features")]
    EmptyTrack { path: PathBuf },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: Error,
    },
}

impl FileError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            FileError::Missing {
                path: path.to_path_buf(),
            }
        } else {
            FileError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    fn malformed(path: &Path, line: u64, message: impl Into<String>) -> Self {
        FileError::Malformed {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn invalid(path: &Path, source: Error) -> Self {
        FileError::Invalid {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type FileResult<T> = std::result::Result<T, FileError>;

/// 17 significant digits: lossless for every finite f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn open(path: &Path) -> FileResult<File> {
    File::open(path).map_err(|e| FileError::io(path, e))
}

fn create(path: &Path) -> FileResult<File> {
    File::create(path).map_err(|e| FileError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> FileError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => FileError::io(path, source),
        other => FileError::malformed(path, line, format!("{other:?}")),
    }
}

/// Reader over a CSV body whose header must equal `columns` exactly.
/// `line_offset` is the number of lines preceding the header row.
struct Table<'a> {
    path: &'a Path,
    reader: csv::Reader<Box<dyn Read + 'a>>,
    line_offset: u64,
}

impl<'a> Table<'a> {
    fn new(path: &'a Path, input: Box<dyn Read + 'a>, columns: &[&str], line_offset: u64) -> FileResult<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        if headers.iter().ne(columns.iter().copied()) {
            return Err(FileError::BadHeader {
                path: path.to_path_buf(),
                line: line_offset + 1,
                message: format!(
                    "expected columns [{}], found [{}]",
                    columns.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        Ok(Self {
            path,
            reader,
            line_offset,
        })
    }

    fn rows(&mut self) -> FileResult<Vec<Row<'a>>> {
        let mut out = Vec::new();
        for record in self.reader.records() {
            let record = record.map_err(|e| csv_error(self.path, e))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0) + self.line_offset;
            out.push(Row {
                path: self.path,
                line,
                record,
            });
        }
        Ok(out)
    }
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: csv::StringRecord,
}

impl Row<'_> {
    fn text(&self, index: usize) -> &str {
        self.record.get(index).unwrap_or("").trim()
    }

    fn float(&self, index: usize, column: &'static str) -> FileResult<f64> {
        let text = self.text(index);
        let v: f64 = text
            .parse()
            .map_err(|_| FileError::malformed(self.path, self.line, format!("{column}: cannot parse {text:?}")))?;
        if !v.is_finite() {
            return Err(FileError::NonFinite {
                path: self.path.to_path_buf(),
                line: self.line,
                column,
            });
        }
        Ok(v)
    }

    fn optional_float(&self, index: usize, column: &'static str) -> FileResult<Option<f64>> {
        if self.text(index).is_empty() {
            Ok(None)
        } else {
            self.float(index, column).map(Some)
        }
    }

    fn vector(&self, first: usize, columns: [&'static str; 3]) -> FileResult<Vector3<f64>> {
        Ok(Vector3::new(
            self.float(first, columns[0])?,
            self.float(first + 1, columns[1])?,
            self.float(first + 2, columns[2])?,
        ))
    }
}

fn write_rows<I>(path: &Path, preamble: Option<&str>, columns: &[&str], rows: I) -> FileResult<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut file = std::io::BufWriter::new(create(path)?);
    if let Some(line) = preamble {
        writeln!(file, "{line}").map_err(|e| FileError::io(path, e))?;
    }
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(columns).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| FileError::io(path, e))
}

fn check_monotone(path: &Path, line: u64, previous: Option<f64>, t: f64) -> FileResult<()> {
    match previous {
        Some(p) if t < p => Err(FileError::NonMonotone {
            path: path.to_path_buf(),
            line,
            previous: p,
            found: t,
        }),
        _ => Ok(()),
    }
}

fn observation_preamble() -> String {
    format!("# {OBSERVATION_MAGIC} version={OBSERVATION_VERSION} frame=ECEF time_unit=s")
}

fn parse_preamble(path: &Path, line: &str) -> FileResult<()> {
    let bad = |message: String| FileError::BadHeader {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| bad("missing '#' metadata line".into()))?;
    let mut tokens = body.split_whitespace();
    if tokens.next() != Some(OBSERVATION_MAGIC) {
        return Err(bad(format!("expected '{OBSERVATION_MAGIC}' tag")));
    }
    let (mut version, mut frame, mut unit) = (None, None, None);
    for token in tokens {
        match token.split_once('=') {
            Some(("version", v)) => version = Some(v),
            Some(("frame", v)) => frame = Some(v),
            Some(("time_unit", v)) => unit = Some(v),
            _ => return Err(bad(format!("unexpected metadata token {token:?}"))),
        }
    }
    if version != Some("1") {
        return Err(bad(format!("unsupported version {version:?}")));
    }
    if frame != Some("ECEF") {
        return Err(bad(format!("frame must be ECEF, got {frame:?}")));
    }
    if unit != Some("s") {
        return Err(bad(format!("time unit must be s, got {unit:?}")));
    }
    Ok(())
}

pub fn write_observations(path: &Path, epochs: &[EpochRecord]) -> FileResult<()> {
    let f = |v: f64| format_float(v);
    let rows = epochs.iter().flat_map(|e| {
        e.observations.iter().map(move |o| {
            vec![
                f(e.time),
                o.sat_id.clone(),
                f(o.pseudorange),
                o.doppler_range_rate.map(f).unwrap_or_default(),
                f(o.cn0),
                f(o.sat_position.x),
                f(o.sat_position.y),
                f(o.sat_position.z),
                f(o.sat_velocity.x),
                f(o.sat_velocity.y),
                f(o.sat_velocity.z),
                f(o.sat_clock_offset),
            ]
        })
    });
    write_rows(path, Some(&observation_preamble()), &OBSERVATION_COLUMNS, rows)
}

/// Groups rows by epoch time, preserving satellite order. Loaded records
/// carry no truth.
pub fn load_observations(path: &Path) -> FileResult<Vec<EpochRecord>> {
    let mut reader = BufReader::new(open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| FileError::io(path, e))?;
    parse_preamble(path, &first)?;
    let mut table = Table::new(path, Box::new(reader), &OBSERVATION_COLUMNS, 1)?;

    let mut epochs: Vec<EpochRecord> = Vec::new();
    for row in table.rows()? {
        let time = row.float(0, "epoch_time")?;
        let sat_id = row.text(1).to_string();
        if sat_id.is_empty() {
            return Err(FileError::malformed(path, row.line, "empty sat_id"));
        }
        let pseudorange = row.float(2, "pseudorange_m")?;
        if pseudorange <= 0.0 {
            return Err(FileError::malformed(path, row.line, "pseudorange must be positive"));
        }
        let obs = SatelliteObservation {
            sat_id,
            pseudorange,
            doppler_range_rate: row.optional_float(3, "doppler_mps")?,
            cn0: row.float(4, "cn0_dbhz")?,
            sat_position: row.vector(5, ["sat_x_m", "sat_y_m", "sat_z_m"])?,
            sat_velocity: row.vector(8, ["sat_vx_mps", "sat_vy_mps", "sat_vz_mps"])?,
            sat_clock_offset: row.float(11, "sat_clk_s")?,
            second_freq_pseudorange: None,
            freq_pair: None,
        };
        let previous = epochs.last().map(|e| e.time);
        check_monotone(path, row.line, previous, time)?;
        match epochs.last_mut() {
            Some(e) if e.time == time => e.observations.push(obs),
            _ => epochs.push(EpochRecord {
                time,
                truth_position: None,
                observations: vec![obs],
            }),
        }
    }
    Ok(epochs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub time: f64,
    pub position: Vector3<f64>,
}

pub fn write_truth(path: &Path, epochs: &[EpochRecord]) -> FileResult<()> {
    let rows = epochs.iter().filter_map(|e| {
        e.truth_position.map(|p| {
            vec![
                format_float(e.time),
                format_float(p.x),
                format_float(p.y),
                format_float(p.z),
            ]
        })
    });
    write_rows(path, None, &TRUTH_COLUMNS, rows)
}

pub fn load_truth(path: &Path) -> FileResult<Vec<TruthRow>> {
    let mut table = Table::new(path, Box::new(open(path)?), &TRUTH_COLUMNS, 0)?;
    let mut out: Vec<TruthRow> = Vec::new();
    for row in table.rows()? {
        let time = row.float(0, "epoch_time")?;
        check_monotone(path, row.line, out.last().map(|r| r.time), time)?;
        out.push(TruthRow {
            time,
            position: row.vector(1, ["x_m", "y_m", "z_m"])?,
        });
    }
    Ok(out)
}

/// One output row per filtered epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    pub position: Vector3<f64>,
    /// Standard deviations along east, north, up, m.
    pub sd_enu: Vector3<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// NaN when no map was available.
    pub distance_to_track: f64,
}

pub fn trajectory_rows(solutions: &[EpochSolution], map: Option<&TrackMap>) -> crate::Result<Vec<TrajectoryRow>> {
    solutions
        .iter()
        .map(|s| {
            let position = s.estimate.position();
            let g = ecef_to_geodetic(&position)?;
            let enu = ecef_cov_to_enu(&s.estimate.position_covariance(), &g)?;
            Ok(TrajectoryRow {
                time: s.time,
                position,
                sd_enu: enu.diagonal().map(|v| v.max(0.0).sqrt()),
                converged: s.diagnostics.converged,
                iterations: s.diagnostics.iterations,
                distance_to_track: map.map_or(f64::NAN, |m| m.distance_to_track(&position)),
            })
        })
        .collect()
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> FileResult<()> {
    let f = |v: f64| format_float(v);
    let records = rows.iter().map(|r| {
        vec![
            f(r.time),
            f(r.position.x),
            f(r.position.y),
            f(r.position.z),
            f(r.sd_enu.x),
            f(r.sd_enu.y),
            f(r.sd_enu.z),
            u8::from(r.converged).to_string(),
            r.iterations.to_string(),
            if r.distance_to_track.is_nan() {
                String::new()
            } else {
                f(r.distance_to_track)
            },
        ]
    });
    write_rows(path, None, &TRAJECTORY_COLUMNS, records)
}

pub fn load_trajectory(path: &Path) -> FileResult<Vec<TrajectoryRow>> {
    let mut table = Table::new(path, Box::new(open(path)?), &TRAJECTORY_COLUMNS, 0)?;
    let mut out: Vec<TrajectoryRow> = Vec::new();
    for row in table.rows()? {
        let time = row.float(0, "epoch_time")?;
        check_monotone(path, row.line, out.last().map(|r| r.time), time)?;
        let converged = match row.text(7) {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(FileError::malformed(path, row.line, format!("converged: {other:?}"))),
        };
        let iterations = row
            .text(8)
            .parse()
            .map_err(|_| FileError::malformed(path, row.line, "iterations must be a non-negative integer"))?;
        out.push(TrajectoryRow {
            time,
            position: row.vector(1, ["x_m", "y_m", "z_m"])?,
            sd_enu: row.vector(4, ["sd_e_m", "sd_n_m", "sd_u_m"])?,
            converged,
            iterations,
            distance_to_track: row.optional_float(9, "distance_to_track_m")?.unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

/// Initial estimate as JSON: `{"mean": [8], "covariance": [[8] x 8]}`.
pub fn write_initial_state(path: &Path, estimate: &StateEstimate) -> FileResult<()> {
    let body = StateFile {
        mean: estimate.mean.iter().copied().collect(),
        covariance: estimate
            .covariance
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
    };
    let text = serde_json::to_string_pretty(&body).expect("plain numeric structure");
    std::fs::write(path, text + "\n").map_err(|e| FileError::io(path, e))
}

pub fn load_initial_state(path: &Path) -> FileResult<StateEstimate> {
    let text = std::fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    let body: StateFile = serde_json::from_str(&text)
        .map_err(|e| FileError::malformed(path, e.line() as u64, e.to_string()))?;
    if body.mean.len() != 8 || body.covariance.len() != 8 || body.covariance.iter().any(|r| r.len() != 8) {
        return Err(FileError::malformed(path, 0, "state must have 8 entries and an 8x8 covariance"));
    }
    let mean = StateVector::from_column_slice(&body.mean);
    let covariance = StateMatrix::from_fn(|i, j| body.covariance[i][j]);
    StateEstimate::new(mean, covariance).map_err(|e| FileError::invalid(path, e))
}

/// Line features as degree-valued polylines; a missing height means 0 m.
pub fn read_track_lines(path: &Path) -> FileResult<Vec<Vec<GeodeticDegrees>>> {
    let text = std::fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    let doc: geojson::GeoJson = text
        .parse()
        .map_err(|e: geojson::Error| FileError::malformed(path, 0, e.to_string()))?;
    let mut geometries = Vec::new();
    match doc {
        geojson::GeoJson::FeatureCollection(fc) => {
            geometries.extend(fc.features.into_iter().filter_map(|f| f.geometry));
        }
        geojson::GeoJson::Feature(f) => geometries.extend(f.geometry),
        geojson::GeoJson::Geometry(g) => geometries.push(g),
    }

    let mut lines = Vec::new();
    for g in geometries {
        match g.value {
            geojson::Value::LineString(line) => lines.push(line),
            geojson::Value::MultiLineString(multi) => lines.extend(multi),
            _ => {}
        }
    }
    if lines.is_empty() {
        return Err(FileError::EmptyTrack {
            path: path.to_path_buf(),
        });
    }
    lines
        .into_iter()
        .map(|line| {
            line.into_iter()
                .map(|pos| match pos.as_slice() {
                    [lon, lat] => Ok(GeodeticDegrees {
                        latitude_deg: *lat,
                        longitude_deg: *lon,
                        height_m: 0.0,
                    }),
                    [lon, lat, h, ..] => Ok(GeodeticDegrees {
                        latitude_deg: *lat,
                        longitude_deg: *lon,
                        height_m: *h,
                    }),
                    _ => Err(FileError::malformed(path, 0, "position needs at least two coordinates")),
                })
                .collect()
        })
        .collect()
}

pub fn load_track(path: &Path) -> FileResult<TrackMap> {
    let lines = read_track_lines(path)?;
    map_from_degrees(&lines).map_err(|e| FileError::invalid(path, e))
}

/// Writes polylines as a FeatureCollection of `[lon, lat, h]` LineStrings.
pub fn write_track(path: &Path, lines: &[Vec<GeodeticDegrees>]) -> FileResult<()> {
    let features = lines
        .iter()
        .map(|line| {
            let coords = line
                .iter()
                .map(|d| vec![d.longitude_deg, d.latitude_deg, d.height_m])
                .collect();
            geojson::Feature {
                geometry: Some(geojson::Geometry::new(geojson::Value::LineString(coords))),
                ..Default::default()
            }
        })
        .collect();
    let doc = geojson::GeoJson::FeatureCollection(geojson::FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    });
    std::fs::write(path, doc.to_string() + "\n").map_err(|e| FileError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantMetrics {
    pub label: String,
    pub rmse_to_truth_m: Option<f64>,
    pub rms_distance_to_track_m: f64,
    pub consecutive_step_distances_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsReport {
    pub variants: Vec<VariantMetrics>,
}

/// Distance-to-track, optional truth error and step-length series of one
/// trajectory.
pub fn evaluate(
    label: &str,
    positions: &[Vector3<f64>],
    map: &TrackMap,
    truth: Option<&[Vector3<f64>]>,
) -> crate::Result<VariantMetrics> {
    if positions.is_empty() {
        return Err(Error::contract("cannot evaluate an empty trajectory"));
    }
    let rms_distance_to_track_m = (positions
        .iter()
        .map(|p| map.distance_to_track(p).powi(2))
        .sum::<f64>()
        / positions.len() as f64)
        .sqrt();
    let rmse_to_truth_m = truth
        .map(|t| crate::sim::rmse(positions, t))
        .transpose()?;
    let consecutive_step_distances_m = positions.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    Ok(VariantMetrics {
        label: label.to_string(),
        rmse_to_truth_m,
        rms_distance_to_track_m,
        consecutive_step_distances_m,
    })
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> FileResult<()> {
    let rows = report.variants.iter().map(|v| {
        vec![
            v.label.clone(),
            v.rmse_to_truth_m.map(format_float).unwrap_or_default(),
            format_float(v.rms_distance_to_track_m),
        ]
    });
    write_rows(path, None, &["label", "rmse_to_truth_m", "rms_distance_to_track_m"], rows)
}

/// Step lengths between consecutive epochs, keyed by the later epoch time.
pub fn write_steps(path: &Path, times: &[f64], steps: &[f64]) -> FileResult<()> {
    let rows = times
        .iter()
        .skip(1)
        .zip(steps)
        .map(|(t, s)| vec![format_float(*t), format_float(*s)]);
    write_rows(path, None, &["epoch_time", "step_m"], rows)
}
