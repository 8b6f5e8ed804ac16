//! Synthetic RSS stream generation.
//!
//! A scenario places moving tags on a floor map and draws, for every epoch,
//! tag and antenna, one log-normal shadowed reading. Each draw consumes the
//! same random numbers whether or not the reading survives, so changing
//! noise or coverage parameters never reshuffles the rest of the stream.

mod angle;
mod eval;
pub mod presets;

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{PathLossModel, RangingSample};
use crate::error::{Error, Result};
use crate::ingest::RssSample;
use crate::locate::FloorMap;

pub use angle::AngleTable;
pub use eval::{evaluate, Calibration, ErrorReport, ErrorRow, EvalConfig};

fn default_read_probability() -> f64 {
    0.95
}

fn default_epoch_ms() -> i64 {
    500
}

/// Physical tag family: propagation model and nominal read range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagClass {
    pub name: String,
    /// Beyond this 3-D distance no reading is produced, meters.
    pub max_read_range: f64,
    pub model: PathLossModel,
    /// Probability that an in-range reading is actually delivered.
    #[serde(default = "default_read_probability")]
    pub read_probability: f64,
}

impl TagClass {
    pub fn new(name: impl Into<String>, max_read_range: f64, model: PathLossModel) -> Self {
        Self {
            name: name.into(),
            max_read_range,
            model,
            read_probability: default_read_probability(),
        }
    }

    pub fn with_read_probability(mut self, p: f64) -> Self {
        self.read_probability = p;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// ms
    pub t: i64,
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn new(t: i64, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }
}

/// Piecewise-linear path. Before the first waypoint the tag sits at the
/// first one, after the last it stays at the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tag_id: String,
    pub class: String,
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(tag_id: impl Into<String>, class: impl Into<String>, waypoints: Vec<Waypoint>) -> Self {
        Self {
            tag_id: tag_id.into(),
            class: class.into(),
            waypoints,
        }
    }

    pub fn stationary(tag_id: impl Into<String>, class: impl Into<String>, x: f64, y: f64) -> Self {
        Self::new(tag_id, class, vec![Waypoint::new(0, x, y)])
    }

    pub fn position_at(&self, t: i64) -> [f64; 2] {
        let w = &self.waypoints;
        let first = w[0];
        if t <= first.t {
            return [first.x, first.y];
        }
        let i = w.partition_point(|p| p.t <= t);
        if i >= w.len() {
            let last = w[w.len() - 1];
            return [last.x, last.y];
        }
        let (a, b) = (w[i - 1], w[i]);
        let f = (t - a.t) as f64 / (b.t - a.t) as f64;
        [a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)]
    }

    pub fn end_time(&self) -> i64 {
        self.waypoints.last().map_or(0, |w| w.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub floor_map: FloorMap,
    pub tag_classes: Vec<TagClass>,
    pub tags: Vec<Trajectory>,
    /// Readability grids keyed by array geometry and tag class. Empty means
    /// every in-range antenna can read every tag.
    #[serde(default)]
    pub angle_coverage: Vec<AngleTable>,
    #[serde(default = "default_epoch_ms")]
    pub epoch_ms: i64,
    #[serde(default)]
    pub seed: u64,
}

/// Ground-truth position of a tag at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t_ms: i64,
    pub tag_id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimStats {
    pub epochs: u64,
    /// Readings that were in range and angularly covered.
    pub opportunities: u64,
    pub samples: u64,
}

impl SimStats {
    /// Fraction of opportunities lost to the read probability.
    pub fn dropout_rate(&self) -> f64 {
        if self.opportunities == 0 {
            0.0
        } else {
            1.0 - self.samples as f64 / self.opportunities as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimOutput {
    pub samples: Vec<RssSample>,
    pub truth: Vec<TruthRecord>,
    pub stats: SimStats,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses, validates and prepares the embedded floor map.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut scenario: Scenario = serde_json::from_str(text)?;
        scenario.prepare()?;
        Ok(scenario)
    }

    pub fn prepare(&mut self) -> Result<()> {
        self.validate()?;
        self.floor_map.prepare()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario is always serializable")
    }

    pub fn class(&self, name: &str) -> Option<&TagClass> {
        self.tag_classes.iter().find(|c| c.name == name)
    }

    pub fn class_of(&self, tag_id: &str) -> Option<&TagClass> {
        self.tags
            .iter()
            .find(|t| t.tag_id == tag_id)
            .and_then(|t| self.class(&t.class))
    }

    /// Latest waypoint time over all tags.
    pub fn natural_duration(&self) -> i64 {
        self.tags.iter().map(Trajectory::end_time).max().unwrap_or(0) + self.epoch_ms
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(Error::FloorMap(p)) = self.floor_map.validate() {
            problems.extend(p.into_iter().map(|m| format!("floor_map: {m}")));
        }
        if self.epoch_ms <= 0 {
            problems.push(format!("epoch_ms must be positive, got {}", self.epoch_ms));
        }
        let mut names = HashSet::new();
        for c in &self.tag_classes {
            if !names.insert(c.name.as_str()) {
                problems.push(format!("duplicate tag class `{}`", c.name));
            }
            if let Err(e) = c.model.validate() {
                problems.push(format!("tag class `{}`: {e}", c.name));
            }
            if !(c.max_read_range.is_finite() && c.max_read_range > 0.0) {
                problems.push(format!("tag class `{}`: max_read_range must be positive", c.name));
            }
            if !(c.read_probability > 0.0 && c.read_probability <= 1.0) {
                problems.push(format!(
                    "tag class `{}`: read_probability must be in (0, 1], got {}",
                    c.name, c.read_probability
                ));
            }
        }
        let mut ids = HashSet::new();
        for t in &self.tags {
            if !ids.insert(t.tag_id.as_str()) {
                problems.push(format!("duplicate tag id `{}`", t.tag_id));
            }
            if !names.contains(t.class.as_str()) {
                problems.push(format!("tag `{}` references unknown class `{}`", t.tag_id, t.class));
            }
            if t.waypoints.is_empty() {
                problems.push(format!("tag `{}` has no waypoints", t.tag_id));
            }
            if t.waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
                problems.push(format!("tag `{}`: waypoint times must strictly increase", t.tag_id));
            }
            if t.waypoints.iter().any(|w| !(w.x.is_finite() && w.y.is_finite())) {
                problems.push(format!("tag `{}`: waypoint coordinates must be finite", t.tag_id));
            }
        }
        for (i, table) in self.angle_coverage.iter().enumerate() {
            for p in table.problems() {
                problems.push(format!("angle_coverage[{i}]: {p}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(problems))
        }
    }

    fn coverage_for(&self, class: &str, geometry: crate::locate::Geometry) -> Option<&AngleTable> {
        self.angle_coverage
            .iter()
            .find(|a| a.tag_class == class && a.geometry == geometry)
    }
}

/// Generates samples and ground truth for epochs `t = k·epoch_ms` with
/// `t < duration_ms`. Output is fully determined by the scenario seed.
pub fn run(scenario: &Scenario, duration_ms: i64) -> Result<SimOutput> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let map = &scenario.floor_map;
    let mut out = SimOutput::default();
    let center = [map.width / 2.0, map.height / 2.0];
    let mut t = 0;
    while t < duration_ms {
        out.stats.epochs += 1;
        for tag in &scenario.tags {
            let class = scenario.class(&tag.class).expect("validated");
            let [x, y] = tag.position_at(t);
            out.truth.push(TruthRecord {
                t_ms: t,
                tag_id: tag.tag_id.clone(),
                x,
                y,
            });
            for array in &map.arrays {
                let coverage = scenario.coverage_for(&class.name, array.geometry);
                for (ant, a) in array.antennas.iter().enumerate() {
                    let d = ((x - a[0]).powi(2) + (y - a[1]).powi(2) + (map.tag_height - a[2]).powi(2)).sqrt();
                    let u: f64 = rng.random();
                    let rss = class.model.sample_rss(d.max(1e-3), &mut rng)?;
                    let covered = coverage.is_none_or(|table| {
                        let c = array.centroid();
                        let facing = array.facing.unwrap_or([center[0] - c[0], center[1] - c[1]]);
                        table.readable(angle::offset_angle(facing, [x - c[0], y - c[1]]), d)
                    });
                    if d > class.max_read_range || !covered {
                        continue;
                    }
                    out.stats.opportunities += 1;
                    if u < class.read_probability {
                        out.stats.samples += 1;
                        out.samples
                            .push(RssSample::new(t, &tag.tag_id, &array.reader_id, ant, rss));
                    }
                }
            }
        }
        t += scenario.epoch_ms;
    }
    tracing::debug!(
        samples = out.stats.samples,
        dropout = out.stats.dropout_rate(),
        "simulation finished"
    );
    Ok(out)
}

/// Ranging survey: `per_distance` draws from `model` at each distance, in
/// distance order. Output is fully determined by `seed`.
pub fn ranging_sweep(model: &PathLossModel, distances: &[f64], per_distance: usize, seed: u64) -> Result<Vec<RangingSample>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(distances.len() * per_distance);
    for &d in distances {
        for _ in 0..per_distance {
            out.push(RangingSample::new(d, model.sample_rss(d, &mut rng)?)?);
        }
    }
    Ok(out)
}
