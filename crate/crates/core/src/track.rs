//! Track network as ECEF polylines with a uniform-grid spatial index, and
//! the soft track constraint built from it.
//!
//! The constraint projects the prior position orthogonally onto the nearest
//! segment and offers that point to the filter as a 3-D position
//! pseudo-measurement. Its covariance is tight across the rail, loose along
//! it, and moderate in the vertical, so the posterior is attracted toward the
//! track without being forced onto it.

use rustc_hash::FxHashMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{Jacobian, LinearModel, MeasurementBlock, StateEstimate, POS};
use crate::frames::{ecef_to_geodetic, enu_to_ecef_vector, geodetic_to_ecef, GeodeticPosition};

pub const DEFAULT_CELL_SIZE: f64 = 50.0;
const MIN_SEGMENT_LENGTH: f64 = 1e-3;

type Cell = [i64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub polyline: usize,
}

impl Segment {
    /// Closest point on the segment and its distance to `p`.
    pub fn closest_point(&self, p: &Vector3<f64>) -> (Vector3<f64>, f64) {
        let d = self.end - self.start;
        let t = ((p - self.start).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        let q = self.start + d * t;
        (q, (p - q).norm())
    }

    pub fn direction(&self) -> Vector3<f64> {
        (self.end - self.start).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Vector3<f64>,
    pub segment_id: usize,
    pub along_track_unit: Vector3<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct TrackMap {
    polylines: Vec<Vec<Vector3<f64>>>,
    segments: Vec<Segment>,
    cell_size: f64,
    cells: FxHashMap<Cell, Vec<u32>>,
    lower: Vector3<f64>,
    upper: Vector3<f64>,
}

impl TrackMap {
    /// Builds the grid index over ECEF polylines.
    pub fn build(polylines: Vec<Vec<Vector3<f64>>>, cell_size: f64) -> Result<Self> {
        if polylines.is_empty() {
            return Err(Error::contract("track map needs at least one polyline"));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::contract(format!("invalid grid cell size {cell_size}")));
        }
        let mut segments = Vec::new();
        for (pi, line) in polylines.iter().enumerate() {
            if line.len() < 2 {
                return Err(Error::contract(format!("polyline {pi} has fewer than two waypoints")));
            }
            if line.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { field: "waypoint" });
            }
            for w in line.windows(2) {
                if (w[1] - w[0]).norm() <= MIN_SEGMENT_LENGTH {
                    return Err(Error::contract(format!(
                        "polyline {pi} has a degenerate segment (consecutive waypoints coincide)"
                    )));
                }
                segments.push(Segment {
                    start: w[0],
                    end: w[1],
                    polyline: pi,
                });
            }
        }

        let mut lower = Vector3::repeat(f64::INFINITY);
        let mut upper = Vector3::repeat(f64::NEG_INFINITY);
        let mut cells: FxHashMap<Cell, Vec<u32>> = FxHashMap::default();
        for (id, s) in segments.iter().enumerate() {
            let lo = s.start.inf(&s.end);
            let hi = s.start.sup(&s.end);
            lower = lower.inf(&lo);
            upper = upper.sup(&hi);
            for cell in cell_range(&lo, &hi, cell_size) {
                cells.entry(cell).or_default().push(id as u32);
            }
        }

        Ok(Self {
            polylines,
            segments,
            cell_size,
            cells,
            lower,
            upper,
        })
    }

    /// Converts geodetic polylines to ECEF, collapsing repeated waypoints.
    pub fn from_geodetic(lines: &[Vec<GeodeticPosition>], cell_size: f64) -> Result<Self> {
        let mut polylines = Vec::with_capacity(lines.len());
        for (li, line) in lines.iter().enumerate() {
            let mut ecef: Vec<Vector3<f64>> = Vec::with_capacity(line.len());
            for g in line {
                g.validate()?;
                let p = geodetic_to_ecef(g);
                if let Some(last) = ecef.last() {
                    if (p - last).norm() <= MIN_SEGMENT_LENGTH {
                        log::warn!("track line {li}: dropping repeated waypoint");
                        continue;
                    }
                }
                ecef.push(p);
            }
            if ecef.len() < 2 {
                log::warn!("track line {li}: fewer than two distinct waypoints, skipped");
                continue;
            }
            polylines.push(ecef);
        }
        Self::build(polylines, cell_size)
    }

    pub fn polylines(&self) -> &[Vec<Vector3<f64>>] {
        &self.polylines
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Calls `visit` with every segment id registered in a grid cell within
    /// `radius` of `point`; ids may repeat. Returns `false` without visiting
    /// when the query box spans more cells than there are segments.
    fn visit_nearby(&self, point: &Vector3<f64>, radius: f64, mut visit: impl FnMut(usize)) -> bool {
        let r = Vector3::repeat(radius);
        let lo = (point - r).sup(&self.lower);
        let hi = (point + r).inf(&self.upper);
        if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
            return true;
        }
        if cell_count(&lo, &hi, self.cell_size) > self.segments.len() as f64 {
            return false;
        }
        let size = self.cell_size;
        // slack keeps cells whose boundary sits exactly at the radius
        let reach = radius + 1e-6 * (1.0 + radius);
        let reach2 = reach * reach;
        let gap2 = |c: i64, axis: usize| {
            let g = (c as f64 * size - point[axis])
                .max(point[axis] - (c + 1) as f64 * size)
                .max(0.0);
            g * g
        };
        let (a, b) = (cell_of(&lo, size), cell_of(&hi, size));
        for x in a[0]..=b[0] {
            let gx = gap2(x, 0);
            if gx > reach2 {
                continue;
            }
            for y in a[1]..=b[1] {
                let gxy = gx + gap2(y, 1);
                if gxy > reach2 {
                    continue;
                }
                for z in a[2]..=b[2] {
                    if gxy + gap2(z, 2) > reach2 {
                        continue;
                    }
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        ids.iter().for_each(|&id| visit(id as usize));
                    }
                }
            }
        }
        true
    }

    /// Ids of segments registered in grid cells within `radius` of `point`,
    /// ascending and deduplicated.
    pub fn candidates(&self, point: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut ids = Vec::new();
        if !self.visit_nearby(point, radius, |id| ids.push(id)) {
            ids = (0..self.segments.len()).collect();
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Closest point on any segment within `radius` of `point`, via the index.
    pub fn nearest_projection(&self, point: &Vector3<f64>, radius: f64) -> Option<Projection> {
        if !point.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mut best = Best::default();
        if self.visit_nearby(point, radius, |id| best.offer(self, point, radius, id)) {
            best.finish(self)
        } else {
            self.nearest_projection_exhaustive(point, radius)
        }
    }

    /// Same contract as [`nearest_projection`](Self::nearest_projection) by
    /// scanning every segment.
    pub fn nearest_projection_exhaustive(&self, point: &Vector3<f64>, radius: f64) -> Option<Projection> {
        let mut best = Best::default();
        (0..self.segments.len()).for_each(|id| best.offer(self, point, radius, id));
        best.finish(self)
    }

    /// Distance from `point` to the nearest segment, without radius limit.
    pub fn distance_to_track(&self, point: &Vector3<f64>) -> f64 {
        self.nearest_unbounded(point)
            .map_or(f64::INFINITY, |p| p.distance)
    }

    pub fn nearest_unbounded(&self, point: &Vector3<f64>) -> Option<Projection> {
        let outside = (0..3).any(|i| point[i] < self.lower[i] || point[i] > self.upper[i]);
        if outside {
            return self.nearest_projection_exhaustive(point, f64::INFINITY);
        }
        let extent = (self.upper - self.lower).norm();
        let mut radius = self.cell_size;
        // A hit within `radius` is the global nearest: anything closer is also within it.
        while radius <= extent {
            if let Some(p) = self.nearest_projection(point, radius) {
                return Some(p);
            }
            radius *= 2.0;
        }
        self.nearest_projection_exhaustive(point, f64::INFINITY)
    }
}

/// Running nearest segment; ties go to the lowest id whatever the
/// visiting order.
#[derive(Default)]
struct Best(Option<(usize, Vector3<f64>, f64)>);

impl Best {
    fn offer(&mut self, map: &TrackMap, point: &Vector3<f64>, radius: f64, id: usize) {
        let (q, d) = map.segments[id].closest_point(point);
        if d <= radius && self.0.is_none_or(|(bi, _, bd)| d < bd || (d == bd && id < bi)) {
            self.0 = Some((id, q, d));
        }
    }

    fn finish(self, map: &TrackMap) -> Option<Projection> {
        self.0.map(|(id, q, d)| Projection {
            point: q,
            segment_id: id,
            along_track_unit: map.segments[id].direction(),
            distance: d,
        })
    }
}

fn cell_of(p: &Vector3<f64>, size: f64) -> Cell {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

fn cell_count(lo: &Vector3<f64>, hi: &Vector3<f64>, size: f64) -> f64 {
    let (a, b) = (cell_of(lo, size), cell_of(hi, size));
    (0..3).map(|i| (b[i] - a[i] + 1) as f64).product()
}

fn cell_range(lo: &Vector3<f64>, hi: &Vector3<f64>, size: f64) -> impl Iterator<Item = Cell> {
    let (a, b) = (cell_of(lo, size), cell_of(hi, size));
    (a[0]..=b[0]).flat_map(move |x| (a[1]..=b[1]).flat_map(move |y| (a[2]..=b[2]).map(move |z| [x, y, z])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftConstraintConfig {
    /// Standard deviation across the rail, m.
    pub cross_track_sigma: f64,
    /// Standard deviation along the rail, m.
    pub along_track_sigma: f64,
    pub vertical_sigma: f64,
    /// Tracks farther than this from the prior are ignored, m.
    pub search_radius: f64,
    pub enabled: bool,
    /// Re-project onto the track from each refined estimate instead of only
    /// from the prior.
    pub reproject_each_iteration: bool,
}

impl Default for SoftConstraintConfig {
    fn default() -> Self {
        Self {
            cross_track_sigma: 2.0,
            along_track_sigma: 50.0,
            vertical_sigma: 5.0,
            search_radius: 100.0,
            enabled: true,
            reproject_each_iteration: false,
        }
    }
}

impl SoftConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.cross_track_sigma, self.along_track_sigma, self.vertical_sigma];
        if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::contract("constraint sigmas must be positive"));
        }
        if !(self.search_radius > 0.0) {
            return Err(Error::contract("constraint search radius must be positive"));
        }
        Ok(())
    }
}

/// Orthonormal (along, cross, vertical) axes of a constraint at `point`.
fn constraint_axes(point: &Vector3<f64>, along: &Vector3<f64>) -> Option<[Vector3<f64>; 3]> {
    let g = ecef_to_geodetic(point).ok()?;
    let up = enu_to_ecef_vector(&Vector3::z(), &g);
    let cross = up.cross(along);
    let n = cross.norm();
    if n < 1e-6 {
        return None;
    }
    let cross = cross / n;
    let vertical = along.cross(&cross);
    Some([*along, cross, vertical])
}

/// Covariance with the given standard deviations along each axis.
pub fn anisotropic_covariance(axes: &[Vector3<f64>; 3], sigmas: [f64; 3]) -> Matrix3<f64> {
    axes.iter()
        .zip(sigmas)
        .map(|(u, s)| u * u.transpose() * (s * s))
        .sum()
}

/// Position pseudo-measurement built from the orthogonal projection of
/// `anchor` onto the track. Returns `None` when no segment is in range.
pub fn constraint_from_point(
    anchor: &Vector3<f64>,
    map: &TrackMap,
    config: &SoftConstraintConfig,
) -> Option<MeasurementBlock> {
    if !config.enabled {
        return None;
    }
    let projection = map.nearest_projection(anchor, config.search_radius)?;
    let axes = constraint_axes(&projection.point, &projection.along_track_unit)?;
    let cov = anisotropic_covariance(
        &axes,
        [config.along_track_sigma, config.cross_track_sigma, config.vertical_sigma],
    );
    let mut h = Jacobian::zeros(3);
    for i in 0..3 {
        h[(i, POS + i)] = 1.0;
    }
    MeasurementBlock::linear(
        "track",
        DVector::from_column_slice(projection.point.as_slice()),
        DMatrix::from_column_slice(3, 3, cov.as_slice()),
        LinearModel::new(h),
    )
    .ok()
}

/// Soft constraint from the prior mean; `None` when inactive.
pub fn soft_constraint_measurement(
    prior: &StateEstimate,
    map: &TrackMap,
    config: &SoftConstraintConfig,
) -> Option<MeasurementBlock> {
    let block = constraint_from_point(&prior.position(), map, config);
    if block.is_none() && config.enabled {
        log::debug!("soft constraint inactive: no track within {} m", config.search_radius);
    }
    block
}
