//! From per-antenna RSS to a position on the floor map.
//!
//! Each present reading is (optionally) smoothed and inverted into a range,
//! the ranges are multilaterated into a 2D fix, and the fix is mapped to the
//! zone that contains it.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::PathLossModel;
use crate::diversity::RssVector;
use crate::error::{Error, Result};
use crate::filters::{KalmanParams, KalmanState};

const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE: f64 = 1e-6;
const GEOMETRY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    #[default]
    Linear,
    LShaped,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaArray {
    pub reader_id: String,
    #[serde(default)]
    pub geometry: Geometry,
    /// Antenna positions `[x, y, z]` in meters, in the same order as the
    /// readings of an [`RssVector`] from this reader.
    pub antennas: Vec<[f64; 3]>,
    /// Unit vector pointing into the area the array covers. Used to pick the
    /// side of a collinear array on which a fix is placed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facing: Option<[f64; 2]>,
}

impl AntennaArray {
    pub fn new(reader_id: impl Into<String>, geometry: Geometry, antennas: Vec<[f64; 3]>) -> Self {
        Self {
            reader_id: reader_id.into(),
            geometry,
            antennas,
            facing: None,
        }
    }

    pub fn with_facing(mut self, facing: [f64; 2]) -> Self {
        self.facing = Some(normalize(facing));
        self
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid3(&self.antennas)
    }

    /// Centroid of the first `n` antennas.
    pub fn subset_centroid(&self, n: usize) -> [f64; 3] {
        centroid3(&self.antennas[..n.min(self.antennas.len())])
    }

    /// True when the antennas' floor projections lie on one line (or coincide).
    pub fn is_collinear(&self) -> bool {
        let pts: Vec<[f64; 2]> = self.antennas.iter().map(|a| [a[0], a[1]]).collect();
        pts_are_collinear(&pts)
    }
}

fn centroid3(pts: &[[f64; 3]]) -> [f64; 3] {
    let n = pts.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in pts {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    c
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let len = v[0].hypot(v[1]);
    if len > 0.0 {
        [v[0] / len, v[1] / len]
    } else {
        v
    }
}

/// Direction of the line through the two most distant points, if they differ.
fn collinear_axis(pts: &[[f64; 2]]) -> Option<([f64; 2], [f64; 2])> {
    let mut best: Option<(f64, [f64; 2], [f64; 2])> = None;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d = (b[0] - a[0]).hypot(b[1] - a[1]);
            if best.is_none_or(|(bd, _, _)| d > bd) {
                best = Some((d, *a, *b));
            }
        }
    }
    best.filter(|(d, _, _)| *d > GEOMETRY_EPS)
        .map(|(_, a, b)| (a, normalize([b[0] - a[0], b[1] - a[1]])))
}

fn pts_are_collinear(pts: &[[f64; 2]]) -> bool {
    match collinear_axis(pts) {
        None => true,
        Some((origin, dir)) => pts.iter().all(|p| {
            let off = (p[0] - origin[0]) * -dir[1] + (p[1] - origin[1]) * dir[0];
            off.abs() <= 1e-6
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    pub name: String,
    pub polygon: Vec<[f64; 2]>,
}

impl Zone {
    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(id: impl Into<String>, name: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    /// Containment with the boundary counted as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        on_boundary(&self.polygon, x, y) || point_in_polygon(&self.polygon, x, y)
    }

    /// Distance from an inside point to the zone boundary (how deep it sits),
    /// zero for points outside.
    pub fn depth(&self, x: f64, y: f64) -> f64 {
        if self.contains(x, y) {
            boundary_distance(&self.polygon, x, y)
        } else {
            0.0
        }
    }

    /// Distance from an outside point to the zone, zero for points inside.
    pub fn distance_outside(&self, x: f64, y: f64) -> f64 {
        if self.contains(x, y) {
            0.0
        } else {
            boundary_distance(&self.polygon, x, y)
        }
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.polygon.len().max(1) as f64;
        let (sx, sy) = self.polygon.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        [sx / n, sy / n]
    }
}

fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

fn segment_distance(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (x - (a[0] + t * dx)).hypot(y - (a[1] + t * dy))
}

fn boundary_distance(poly: &[[f64; 2]], x: f64, y: f64) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| segment_distance(poly[i], poly[(i + 1) % n], x, y))
        .fold(f64::INFINITY, f64::min)
}

fn on_boundary(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    boundary_distance(poly, x, y) <= GEOMETRY_EPS
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < -GEOMETRY_EPS && o3 * o4 < -GEOMETRY_EPS
}

fn strictly_inside(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    point_in_polygon(poly, x, y) && !on_boundary(poly, x, y)
}

fn polygons_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let edges = |p: &[[f64; 2]]| {
        let n = p.len();
        (0..n).map(|i| (p[i], p[(i + 1) % n])).collect::<Vec<_>>()
    };
    let (ea, eb) = (edges(a), edges(b));
    if ea.iter().any(|(p, q)| eb.iter().any(|(r, s)| segments_cross(*p, *q, *r, *s))) {
        return true;
    }
    let centroid = |p: &[[f64; 2]]| {
        let n = p.len() as f64;
        let (sx, sy) = p.iter().fold((0.0, 0.0), |(sx, sy), v| (sx + v[0], sy + v[1]));
        [sx / n, sy / n]
    };
    a.iter().any(|v| strictly_inside(b, v[0], v[1]))
        || b.iter().any(|v| strictly_inside(a, v[0], v[1]))
        || {
            let (ca, cb) = (centroid(a), centroid(b));
            strictly_inside(b, ca[0], ca[1]) || strictly_inside(a, cb[0], cb[1])
        }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorMap {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub zones: Vec<Zone>,
    #[serde(default)]
    pub arrays: Vec<AntennaArray>,
    /// Height of the tag plane; ranges are projected onto it before
    /// multilateration.
    #[serde(default)]
    pub tag_height: f64,
}

impl FloorMap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses, validates and fills in default facings.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut map: FloorMap = serde_json::from_str(text)?;
        map.prepare()?;
        Ok(map)
    }

    /// Validates the map and points every collinear array without an explicit
    /// facing towards the middle of the floor.
    pub fn prepare(&mut self) -> Result<()> {
        self.validate()?;
        let center = [self.width / 2.0, self.height / 2.0];
        for array in &mut self.arrays {
            if array.facing.is_some() || !array.is_collinear() {
                continue;
            }
            let pts: Vec<[f64; 2]> = array.antennas.iter().map(|a| [a[0], a[1]]).collect();
            let c = array.centroid();
            let facing = match collinear_axis(&pts) {
                Some((_, dir)) => {
                    let normal = [-dir[1], dir[0]];
                    let toward = (center[0] - c[0]) * normal[0] + (center[1] - c[1]) * normal[1];
                    if toward >= 0.0 {
                        normal
                    } else {
                        [-normal[0], -normal[1]]
                    }
                }
                None => normalize([center[0] - c[0], center[1] - c[1]]),
            };
            array.facing = Some(facing);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.width.is_finite() && self.width > 0.0 && self.height.is_finite() && self.height > 0.0) {
            problems.push(format!("dimensions must be positive, got {} x {}", self.width, self.height));
        }
        let mut ids = HashSet::new();
        for z in &self.zones {
            if !ids.insert(z.id.as_str()) {
                problems.push(format!("duplicate zone id `{}`", z.id));
            }
            if z.polygon.len() < 3 {
                problems.push(format!("zone `{}` needs at least 3 vertices", z.id));
            }
            if z.polygon.iter().flatten().any(|c| !c.is_finite()) {
                problems.push(format!("zone `{}` has a non-finite vertex", z.id));
            }
        }
        for (i, a) in self.zones.iter().enumerate() {
            for b in &self.zones[i + 1..] {
                if a.polygon.len() >= 3 && b.polygon.len() >= 3 && polygons_overlap(&a.polygon, &b.polygon) {
                    problems.push(format!("zones `{}` and `{}` overlap", a.id, b.id));
                }
            }
        }
        let mut readers = HashSet::new();
        for array in &self.arrays {
            if !readers.insert(array.reader_id.as_str()) {
                problems.push(format!("duplicate reader id `{}`", array.reader_id));
            }
            if array.antennas.is_empty() {
                problems.push(format!("array `{}` has no antennas", array.reader_id));
            }
            for (i, a) in array.antennas.iter().enumerate() {
                if a.iter().any(|c| !c.is_finite()) {
                    problems.push(format!("array `{}` antenna {i} is not finite", array.reader_id));
                } else if a[0] < 0.0 || a[0] > self.width || a[1] < 0.0 || a[1] > self.height {
                    problems.push(format!(
                        "array `{}` antenna {i} at ({}, {}) lies outside the map",
                        array.reader_id, a[0], a[1]
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::FloorMap(problems))
        }
    }

    /// Inside the `width × height` rectangle, edges included.
    pub fn on_floor(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }

    pub fn array(&self, reader_id: &str) -> Option<&AntennaArray> {
        self.arrays.iter().find(|a| a.reader_id == reader_id)
    }

    pub fn zone(&self, zone_id: &str) -> Option<&Zone> {
        self.zones.iter().find(|z| z.id == zone_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    /// RMS range misfit of the fix, meters.
    pub residual: f64,
    pub epoch: i64,
    pub source_antenna_count: usize,
    /// Set when fewer than three ranges were available (or the anchors
    /// coincide) and the fix is a weighted centroid.
    #[serde(default)]
    pub degenerate: bool,
}

impl Position {
    pub fn at(x: f64, y: f64, epoch: i64) -> Self {
        Self {
            x,
            y,
            residual: 0.0,
            epoch,
            source_antenna_count: 0,
            degenerate: false,
        }
    }

    pub fn with_epoch(mut self, epoch: i64) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Kalman states for every antenna of one reader, as seen by one tag.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub params: KalmanParams,
    pub states: Vec<KalmanState>,
}

impl FilterBank {
    pub fn new(params: KalmanParams, antennas: usize) -> Self {
        Self {
            params,
            states: vec![KalmanState::new(); antennas],
        }
    }

    /// Runs each present reading through its antenna's filter and returns
    /// the smoothed vector.
    pub fn apply(&mut self, v: &RssVector) -> RssVector {
        if self.states.len() < v.antenna_count() {
            self.states.resize(v.antenna_count(), KalmanState::new());
        }
        let readings = v
            .readings
            .iter()
            .zip(self.states.iter_mut())
            .map(|(r, state)| {
                r.and_then(|z| {
                    *state = state.step(&self.params, z);
                    state.initialized.then_some(state.mu)
                })
            })
            .collect();
        RssVector::new(v.epoch, readings)
    }
}

/// Per-antenna range estimates for one epoch. Absent readings stay absent.
pub fn estimate_distances(
    model: &PathLossModel,
    v: &RssVector,
    filters: Option<&mut FilterBank>,
) -> Vec<Option<f64>> {
    let smoothed;
    let source = match filters {
        Some(bank) => {
            smoothed = bank.apply(v);
            &smoothed
        }
        None => v,
    };
    source
        .readings
        .iter()
        .map(|r| r.map(|rss| model.invert_distance(rss)))
        .collect()
}

/// A known antenna position with a measured range to the tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub position: [f64; 3],
    pub distance: f64,
}

/// Fix from the present ranges of one array.
pub fn multilaterate(array: &AntennaArray, distances: &[Option<f64>], tag_height: f64) -> Option<Position> {
    let anchors: Vec<Anchor> = array
        .antennas
        .iter()
        .zip(distances)
        .filter_map(|(a, d)| d.map(|distance| Anchor { position: *a, distance }))
        .collect();
    multilaterate_anchors(&anchors, array.facing, tag_height)
}

/// Iterative least-squares fix minimizing `Σ (|p − aᵢ| − dᵢ)²` over the floor
/// plane. Ranges are first projected onto the tag plane at `tag_height`.
///
/// With one or two anchors (or anchors that coincide) the result is the
/// `1/d`-weighted centroid of the anchors, flagged degenerate. When all
/// anchors are collinear the fix is placed on the `facing` side.
pub fn multilaterate_anchors(anchors: &[Anchor], facing: Option<[f64; 2]>, tag_height: f64) -> Option<Position> {
    if anchors.is_empty() {
        return None;
    }
    let planar = project(anchors, tag_height);
    let centroid = weighted_centroid(anchors);
    let pts: Vec<[f64; 2]> = planar.iter().map(|(p, _)| *p).collect();

    let axis = collinear_axis(&pts);
    if planar.len() < 3 || axis.is_none() {
        return Some(finish(&planar, centroid, true));
    }

    let collinear = pts_are_collinear(&pts);
    let mut starts = vec![centroid];
    if collinear {
        let (_, dir) = axis.expect("checked above");
        let normal = oriented_normal(dir, facing);
        let reach = planar.iter().map(|(_, r)| *r).fold(f64::INFINITY, f64::min).max(0.5);
        starts = vec![[centroid[0] + normal[0] * reach, centroid[1] + normal[1] * reach]];
    } else if let Some(linear) = linearized_fix(&planar) {
        starts.push(linear);
    }

    let mut best = starts
        .into_iter()
        .map(|s| refine(&planar, s))
        .min_by(|a, b| cost(&planar, *a).total_cmp(&cost(&planar, *b)))
        .expect("at least one start");

    if collinear {
        let (origin, dir) = axis.expect("checked above");
        let normal = oriented_normal(dir, facing);
        let side = (best[0] - origin[0]) * normal[0] + (best[1] - origin[1]) * normal[1];
        if side < 0.0 {
            best = [best[0] - 2.0 * side * normal[0], best[1] - 2.0 * side * normal[1]];
        }
    }
    Some(finish(&planar, best, false))
}

/// Moves a fix that landed off the floor back onto it. Near-collinear
/// anchor sets have a mirror solution across the line of `axis_anchors`;
/// the cheapest of the refined fix and its refined mirror, each clamped to
/// the floor, wins.
pub fn confine_to_floor(map: &FloorMap, anchors: &[Anchor], axis_anchors: &[Anchor], fix: Position) -> Position {
    if fix.degenerate || map.on_floor(fix.x, fix.y) {
        return fix;
    }
    let planar = project(anchors, map.tag_height);
    let clamp = |p: [f64; 2]| [p[0].clamp(0.0, map.width), p[1].clamp(0.0, map.height)];
    let mut starts = vec![clamp([fix.x, fix.y])];
    let pts: Vec<[f64; 2]> = axis_anchors.iter().map(|a| [a.position[0], a.position[1]]).collect();
    if pts.len() >= 2 && pts_are_collinear(&pts) {
        if let Some((origin, dir)) = collinear_axis(&pts) {
            let normal = [-dir[1], dir[0]];
            let side = (fix.x - origin[0]) * normal[0] + (fix.y - origin[1]) * normal[1];
            starts.push([fix.x - 2.0 * side * normal[0], fix.y - 2.0 * side * normal[1]]);
        }
    }
    let best = starts
        .into_iter()
        .map(|s| clamp(refine(&planar, s)))
        .min_by(|a, b| cost(&planar, *a).total_cmp(&cost(&planar, *b)))
        .expect("at least one start");
    finish(&planar, best, false).with_epoch(fix.epoch)
}

/// Anchor positions on the floor plane with ranges projected onto the tag
/// plane.
fn project(anchors: &[Anchor], tag_height: f64) -> Vec<([f64; 2], f64)> {
    anchors
        .iter()
        .map(|a| {
            let dz = a.position[2] - tag_height;
            let d = a.distance.max(0.0);
            ([a.position[0], a.position[1]], (d * d - dz * dz).max(0.0).sqrt())
        })
        .collect()
}

fn oriented_normal(dir: [f64; 2], facing: Option<[f64; 2]>) -> [f64; 2] {
    let normal = [-dir[1], dir[0]];
    match facing {
        Some(f) if f[0] * normal[0] + f[1] * normal[1] < 0.0 => [-normal[0], -normal[1]],
        _ => normal,
    }
}

fn weighted_centroid(anchors: &[Anchor]) -> [f64; 2] {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for a in anchors {
        let w = 1.0 / a.distance.max(1e-6);
        sx += w * a.position[0];
        sy += w * a.position[1];
        sw += w;
    }
    [sx / sw, sy / sw]
}

fn cost(planar: &[([f64; 2], f64)], p: [f64; 2]) -> f64 {
    planar
        .iter()
        .map(|(a, r)| {
            let e = (p[0] - a[0]).hypot(p[1] - a[1]) - r;
            e * e
        })
        .sum()
}

fn finish(planar: &[([f64; 2], f64)], p: [f64; 2], degenerate: bool) -> Position {
    Position {
        x: p[0],
        y: p[1],
        residual: (cost(planar, p) / planar.len() as f64).sqrt(),
        epoch: 0,
        source_antenna_count: planar.len(),
        degenerate,
    }
}

/// Closed-form start from differencing the circle equations against the
/// first anchor. Exact for consistent ranges, `None` for degenerate layouts.
fn linearized_fix(planar: &[([f64; 2], f64)]) -> Option<[f64; 2]> {
    let ([x0, y0], r0) = planar[0];
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ([xi, yi], ri) in &planar[1..] {
        let (ax, ay) = (2.0 * (xi - x0), 2.0 * (yi - y0));
        let b = r0 * r0 - ri * ri + xi * xi - x0 * x0 + yi * yi - y0 * y0;
        a11 += ax * ax;
        a12 += ax * ay;
        a22 += ay * ay;
        b1 += ax * b;
        b2 += ay * b;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-12 * (a11 * a22).max(1.0) {
        return None;
    }
    Some([(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det])
}

/// Levenberg-Marquardt on the range residuals.
fn refine(planar: &[([f64; 2], f64)], start: [f64; 2]) -> [f64; 2] {
    let mut p = start;
    let mut current = cost(planar, p);
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        let (mut h11, mut h12, mut h22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (a, r) in planar {
            let (dx, dy) = (p[0] - a[0], p[1] - a[1]);
            let dist = dx.hypot(dy);
            if dist < 1e-12 {
                continue;
            }
            let (jx, jy) = (dx / dist, dy / dist);
            let e = dist - r;
            h11 += jx * jx;
            h12 += jx * jy;
            h22 += jy * jy;
            g1 += jx * e;
            g2 += jy * e;
        }
        let (d11, d22) = (h11 * (1.0 + lambda) + 1e-12, h22 * (1.0 + lambda) + 1e-12);
        let det = d11 * d22 - h12 * h12;
        if det.abs() < 1e-18 {
            break;
        }
        let step = [-(d22 * g1 - h12 * g2) / det, -(d11 * g2 - h12 * g1) / det];
        let candidate = [p[0] + step[0], p[1] + step[1]];
        let next = cost(planar, candidate);
        let step_len = step[0].hypot(step[1]);
        if next <= current {
            p = candidate;
            current = next;
            lambda = (lambda / 10.0).max(1e-12);
            if step_len < STEP_TOLERANCE {
                break;
            }
        } else {
            lambda *= 10.0;
            if step_len < STEP_TOLERANCE {
                break;
            }
        }
    }
    p
}

/// Zone containing `p`. Points on a shared edge go to the zone listed first.
pub fn resolve_zone<'a>(map: &'a FloorMap, p: &Position) -> Option<&'a Zone> {
    map.zones.iter().find(|z| z.contains(p.x, p.y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> AntennaArray {
        AntennaArray::new(
            "r1",
            Geometry::Custom,
            vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]],
        )
    }

    fn ranges_from(array: &AntennaArray, x: f64, y: f64, z: f64) -> Vec<Option<f64>> {
        array
            .antennas
            .iter()
            .map(|a| Some(((a[0] - x).powi(2) + (a[1] - y).powi(2) + (a[2] - z).powi(2)).sqrt()))
            .collect()
    }

    fn two_zone_map() -> FloorMap {
        FloorMap {
            width: 20.0,
            height: 10.0,
            zones: vec![
                Zone::rect("cutting", "Cutting", 0.0, 0.0, 10.0, 10.0),
                Zone::rect("bending", "Bending", 10.0, 0.0, 20.0, 10.0),
            ],
            arrays: vec![],
            tag_height: 0.0,
        }
    }

    #[test]
    fn reading_at_reference_gives_reference_distance() {
        let model = PathLossModel::new(-54.5, 1.8638);
        let d = estimate_distances(&model, &RssVector::new(0, vec![Some(-54.5), None]), None);
        assert!((d[0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(d[1], None);
        let none = estimate_distances(&model, &RssVector::new(0, vec![None, None]), None);
        assert!(none.iter().all(Option::is_none));
    }

    #[test]
    fn noiseless_vector_gives_true_distances() {
        let model = PathLossModel::new(-54.5, 1.8638);
        let array = triangle();
        let truth = ranges_from(&array, 3.0, 4.0, 0.0);
        let v = RssVector::new(
            0,
            truth.iter().map(|d| Some(model.predict_rss(d.unwrap()).unwrap())).collect(),
        );
        for (est, t) in estimate_distances(&model, &v, None).iter().zip(&truth) {
            assert!((est.unwrap() - t.unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn filter_bank_first_reading_passes_through() {
        let model = PathLossModel::new(-54.5, 1.8638);
        let mut bank = FilterBank::new(KalmanParams::default(), 2);
        let d = estimate_distances(&model, &RssVector::new(0, vec![Some(-54.5), None]), Some(&mut bank));
        assert!((d[0].unwrap() - 1.0).abs() < 1e-12);
        assert!(bank.states[0].initialized);
        assert!(!bank.states[1].initialized);
    }

    #[test]
    fn exact_triangle_fix() {
        let array = triangle();
        let p = multilaterate(&array, &ranges_from(&array, 3.0, 4.0, 0.0), 0.0).unwrap();
        assert!((p.x - 3.0).abs() < 1e-6 && (p.y - 4.0).abs() < 1e-6, "{p:?}");
        assert!(p.residual < 1e-6);
        assert_eq!(p.source_antenna_count, 3);
        assert!(!p.degenerate);
    }

    #[test]
    fn antenna_height_is_projected_out() {
        let mut array = triangle();
        for a in &mut array.antennas {
            a[2] = 2.5;
        }
        let p = multilaterate(&array, &ranges_from(&array, 6.0, 2.0, 1.0), 1.0).unwrap();
        assert!((p.x - 6.0).abs() < 1e-6 && (p.y - 2.0).abs() < 1e-6);
    }

    #[test]
    fn single_range_sits_on_antenna() {
        let array = triangle();
        let p = multilaterate(&array, &[None, Some(4.0), None], 0.0).unwrap();
        assert_eq!((p.x, p.y), (10.0, 0.0));
        assert!(p.degenerate);
        assert_eq!(p.source_antenna_count, 1);
        assert!((p.residual - 4.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_gives_midpoint() {
        let array = triangle();
        let p = multilaterate(&array, &[Some(6.0), Some(6.0), None], 0.0).unwrap();
        assert!((p.x - 5.0).abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!(p.degenerate);
    }

    #[test]
    fn no_ranges_no_fix() {
        assert!(multilaterate(&triangle(), &[None, None, None], 0.0).is_none());
    }

    #[test]
    fn collinear_array_fixes_in_front() {
        let array = AntennaArray::new(
            "lin",
            Geometry::Linear,
            vec![[4.0, 0.0, 0.0], [5.0, 0.0, 0.0], [6.0, 0.0, 0.0], [7.0, 0.0, 0.0]],
        )
        .with_facing([0.0, 1.0]);
        let p = multilaterate(&array, &ranges_from(&array, 5.3, 3.0, 0.0), 0.0).unwrap();
        assert!((p.x - 5.3).abs() < 1e-6 && (p.y - 3.0).abs() < 1e-6, "{p:?}");

        let behind = array.clone().with_facing([0.0, -1.0]);
        let q = multilaterate(&behind, &ranges_from(&array, 5.3, 3.0, 0.0), 0.0).unwrap();
        assert!((q.x - 5.3).abs() < 1e-6 && (q.y + 3.0).abs() < 1e-6, "{q:?}");
    }

    #[test]
    fn mirror_fix_is_pulled_back_onto_the_floor() {
        let mut map = two_zone_map();
        map.tag_height = 1.0;
        let line: Vec<Anchor> = [8.5, 9.5, 10.5, 11.5]
            .iter()
            .map(|&x| Anchor {
                position: [x, 3.0, 2.0],
                distance: ((x - 9.5f64).powi(2) + 5.0f64.powi(2) + 1.0).sqrt(),
            })
            .collect();
        let p = confine_to_floor(&map, &line, &line, Position::at(9.5, -2.0, 4_000));
        assert!((p.x - 9.5).abs() < 1e-6 && (p.y - 8.0).abs() < 1e-6, "{p:?}");
        assert_eq!(p.epoch, 4_000);
        assert!(p.residual < 1e-6);
    }

    #[test]
    fn unreachable_fix_is_clamped_to_the_edge() {
        let map = two_zone_map();
        let anchors = [[1.0, 1.0, 0.0], [2.0, 1.0, 0.0], [1.0, 2.0, 0.0]].map(|position| Anchor {
            position,
            distance: 30.0,
        });
        let p = confine_to_floor(&map, &anchors, &anchors, Position::at(-25.0, 1.0, 0));
        assert!(map.on_floor(p.x, p.y), "{p:?}");
        let inside = Position::at(3.0, 3.0, 0);
        assert_eq!(confine_to_floor(&map, &anchors, &anchors, inside), inside);
    }

    #[test]
    fn coincident_antennas_are_degenerate() {
        let array = AntennaArray::new("c", Geometry::Custom, vec![[1.0, 1.0, 0.0]; 3]);
        let p = multilaterate(&array, &[Some(2.0), Some(2.0), Some(2.0)], 0.0).unwrap();
        assert!(p.degenerate);
        assert_eq!((p.x, p.y), (1.0, 1.0));
    }

    #[test]
    fn zone_resolution() {
        let map = two_zone_map();
        let zone = |x, y| resolve_zone(&map, &Position::at(x, y, 0)).map(|z| z.id.as_str());
        assert_eq!(zone(2.0, 3.0), Some("cutting"));
        assert_eq!(zone(25.0, 3.0), None);
        assert_eq!(zone(10.0, 5.0), Some("cutting"));

        let mut swapped = map.clone();
        swapped.zones.reverse();
        assert_eq!(
            resolve_zone(&swapped, &Position::at(10.0, 5.0, 0)).map(|z| z.id.as_str()),
            Some("bending")
        );
    }

    #[test]
    fn polygon_zone_and_depth() {
        let tri = Zone {
            id: "t".into(),
            name: "T".into(),
            polygon: vec![[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]],
        };
        assert!(tri.contains(1.0, 1.0));
        assert!(!tri.contains(3.0, 3.0));
        assert!((tri.depth(1.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((tri.distance_outside(5.0, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn map_validation_collects_every_problem() {
        let mut map = two_zone_map();
        map.zones.push(Zone::rect("dup", "Overlap", 5.0, 5.0, 15.0, 8.0));
        map.zones.push(Zone::rect("cutting", "Again", 30.0, 0.0, 31.0, 1.0));
        map.arrays.push(AntennaArray::new("r", Geometry::Linear, vec![[50.0, 1.0, 0.0]]));
        map.arrays.push(AntennaArray::new("e", Geometry::Linear, vec![]));
        let Err(Error::FloorMap(problems)) = map.validate() else {
            panic!("expected validation failure");
        };
        assert!(problems.iter().any(|p| p.contains("overlap")));
        assert!(problems.iter().any(|p| p.contains("duplicate zone id")));
        assert!(problems.iter().any(|p| p.contains("outside the map")));
        assert!(problems.iter().any(|p| p.contains("no antennas")));
        assert!(two_zone_map().validate().is_ok());
    }

    #[test]
    fn json_load_fills_facing() {
        let text = r#"{
            "width": 20, "height": 10,
            "zones": [{"id": "a", "name": "A", "polygon": [[0,0],[10,0],[10,10],[0,10]]}],
            "arrays": [{"reader_id": "r1", "geometry": "linear",
                        "antennas": [[8,0,1],[9,0,1],[10,0,1],[11,0,1]]}]
        }"#;
        let map = FloorMap::from_json(text).unwrap();
        assert_eq!(map.arrays[0].facing, Some([0.0, 1.0]));
        assert!(map.arrays[0].is_collinear());
        assert!(!triangle().is_collinear());
    }
}
