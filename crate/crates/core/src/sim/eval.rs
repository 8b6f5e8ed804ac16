use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Scenario, TruthRecord};
use crate::channel::{fit_model, PathLossModel, RangingSample};
use crate::diversity::{RssVector, Technique};
use crate::error::{Error, Result};
use crate::ingest::{window_all, RssSample, TagWindow};
use crate::pipeline::{PipelineSpec, PositionEstimator, ProcessingConfig, RangeEstimator};

/// Which path-loss model turns combined RSS back into distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// The tag class's own model.
    #[default]
    ClassModel,
    /// A model fitted per pipeline and tag class to the combined output
    /// against true distance, the way a site survey calibrates a reader.
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub pipelines: Vec<PipelineSpec>,
    /// Extra rows restricted to true distances up to each limit, meters.
    pub range_limits: Vec<f64>,
    pub calibration: Calibration,
    pub processing: ProcessingConfig,
    /// Windowing epoch; the scenario epoch when absent.
    pub epoch_ms: Option<i64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pipelines: PipelineSpec::matrix(&Technique::ALL, &[2, 4]),
            range_limits: Vec::new(),
            calibration: Calibration::ClassModel,
            processing: ProcessingConfig::default(),
            epoch_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub technique: Technique,
    pub antennas: usize,
    pub filtered: bool,
    /// `None` for the unrestricted row.
    pub max_distance: Option<f64>,
    /// Mean absolute range error, meters. NaN when no estimate qualified.
    pub mean_distance_error: f64,
    /// Mean planar position error, meters.
    pub mean_position_error: Option<f64>,
    pub distance_samples: usize,
    pub position_samples: usize,
}

impl ErrorRow {
    pub fn spec(&self) -> PipelineSpec {
        PipelineSpec::new(self.technique, self.antennas, self.filtered)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
    /// Epochs whose combiner refused the input (MRC below the floor).
    pub combiner_errors: u64,
}

impl ErrorReport {
    pub fn row(&self, spec: PipelineSpec, max_distance: Option<f64>) -> Option<&ErrorRow> {
        self.rows
            .iter()
            .find(|r| r.spec() == spec && r.max_distance == max_distance)
    }

    pub fn distance_error(&self, spec: PipelineSpec, max_distance: Option<f64>) -> Option<f64> {
        self.row(spec, max_distance).map(|r| r.mean_distance_error)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "technique,antennas,filtered,max_distance_m,mean_error_m,mean_position_error_m,distance_samples,position_samples\n",
        );
        for r in &self.rows {
            let limit = r.max_distance.map(|d| d.to_string()).unwrap_or_default();
            let pos = r.mean_position_error.map(|e| format!("{e:.9}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9},{},{},{}",
                r.technique, r.antennas, r.filtered, limit, r.mean_distance_error, pos, r.distance_samples, r.position_samples
            );
        }
        out
    }
}

/// An epoch vector with the tag's true floor position.
type Observed<'a> = (&'a RssVector, [f64; 2]);

struct RangeObs {
    class: String,
    true_distance: f64,
    rss: f64,
}

struct PositionObs {
    nearest_array: f64,
    error: f64,
}

/// Runs every configured pipeline over a sample stream and scores it
/// against ground truth.
///
/// Each window is matched with the tag's last truth record inside the
/// window. Range error is measured against the centroid of the antennas a
/// pipeline uses; position error uses all of them. Position errors depend on
/// antenna count and filtering only, since positioning works on per-antenna
/// ranges rather than the combined value.
pub fn evaluate(
    scenario: &Scenario,
    samples: &[RssSample],
    truth: &[TruthRecord],
    cfg: &EvalConfig,
) -> Result<ErrorReport> {
    let map = &scenario.floor_map;
    let epoch_ms = cfg.epoch_ms.unwrap_or(scenario.epoch_ms);
    if epoch_ms <= 0 {
        return Err(Error::Evaluation(format!("epoch must be positive, got {epoch_ms}")));
    }
    let counts: HashMap<String, usize> = map
        .arrays
        .iter()
        .map(|a| (a.reader_id.clone(), a.antennas.len()))
        .collect();
    let windows = window_all(samples, epoch_ms, counts);

    let mut truth_index: HashMap<&str, BTreeMap<i64, [f64; 2]>> = HashMap::new();
    for r in truth {
        truth_index.entry(&r.tag_id).or_default().insert(r.t_ms, [r.x, r.y]);
    }
    let matched: Vec<(&TagWindow, [f64; 2])> = windows
        .iter()
        .filter_map(|w| {
            let series = truth_index.get(w.tag_id.as_str())?;
            let (_, p) = series.range(w.epoch..w.epoch + epoch_ms).next_back()?;
            scenario.class_of(&w.tag_id)?;
            Some((w, *p))
        })
        .collect();
    if matched.is_empty() {
        return Err(Error::Evaluation(
            "no window overlaps the ground truth of a known tag".into(),
        ));
    }

    let mut report = ErrorReport::default();
    for &spec in &cfg.pipelines {
        let (ranges, errors) = collect_ranges(scenario, &matched, spec, &cfg.processing)?;
        report.combiner_errors += errors;
        let models = models_for(scenario, &ranges, cfg.calibration);
        let positions = collect_positions(scenario, &matched, spec, &cfg.processing);
        let limits = std::iter::once(None).chain(cfg.range_limits.iter().map(|&l| Some(l)));
        for limit in limits {
            let within = |d: f64| limit.is_none_or(|l| d <= l);
            let dist: Vec<f64> = ranges
                .iter()
                .filter(|o| within(o.true_distance))
                .map(|o| (models[&o.class].invert_distance(o.rss) - o.true_distance).abs())
                .collect();
            let pos: Vec<f64> = positions
                .iter()
                .filter(|o| within(o.nearest_array))
                .map(|o| o.error)
                .collect();
            report.rows.push(ErrorRow {
                technique: spec.technique,
                antennas: spec.antennas,
                filtered: spec.filtered,
                max_distance: limit,
                mean_distance_error: mean(&dist).unwrap_or(f64::NAN),
                mean_position_error: mean(&pos),
                distance_samples: dist.len(),
                position_samples: pos.len(),
            });
        }
    }
    Ok(report)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn collect_ranges(
    scenario: &Scenario,
    matched: &[(&TagWindow, [f64; 2])],
    spec: PipelineSpec,
    processing: &ProcessingConfig,
) -> Result<(Vec<RangeObs>, u64)> {
    let map = &scenario.floor_map;
    let mut streams: BTreeMap<(&str, &str), Vec<Observed>> = BTreeMap::new();
    for (w, p) in matched {
        for (reader, v) in &w.vectors {
            let Some(array) = map.array(reader) else { continue };
            if array.antennas.len() < spec.antennas {
                continue;
            }
            streams.entry((&w.tag_id, reader)).or_default().push((v, *p));
        }
    }
    let mut out = Vec::new();
    let mut errors = 0;
    for ((tag, reader), stream) in streams {
        let array = map.array(reader).expect("filtered above");
        let class = scenario.class_of(tag).expect("filtered above");
        let c = array.subset_centroid(spec.antennas);
        let mut est = RangeEstimator::new(spec, *processing);
        if spec.technique.is_switching() {
            if let Err(e) = est.calibrate(stream.iter().map(|(v, _)| *v)) {
                tracing::debug!(tag, reader, "threshold calibration skipped: {e}");
            }
        }
        for (v, p) in stream {
            match est.push(v) {
                Ok(Some(rss)) => out.push(RangeObs {
                    class: class.name.clone(),
                    true_distance: ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (map.tag_height - c[2]).powi(2))
                        .sqrt(),
                    rss,
                }),
                Ok(None) => {}
                Err(e) => {
                    errors += 1;
                    tracing::debug!(tag, reader, "epoch skipped: {e}");
                }
            }
        }
    }
    Ok((out, errors))
}

fn models_for(scenario: &Scenario, ranges: &[RangeObs], calibration: Calibration) -> HashMap<String, PathLossModel> {
    scenario
        .tag_classes
        .iter()
        .map(|class| {
            let model = match calibration {
                Calibration::ClassModel => class.model,
                Calibration::Fitted => {
                    let pts: Vec<RangingSample> = ranges
                        .iter()
                        .filter(|o| o.class == class.name && o.true_distance > 0.0)
                        .filter_map(|o| RangingSample::new(o.true_distance, o.rss).ok())
                        .collect();
                    fit_model(&pts, class.model.d0).unwrap_or(class.model)
                }
            };
            (class.name.clone(), model)
        })
        .collect()
}

fn collect_positions(
    scenario: &Scenario,
    matched: &[(&TagWindow, [f64; 2])],
    spec: PipelineSpec,
    processing: &ProcessingConfig,
) -> Vec<PositionObs> {
    let map = &scenario.floor_map;
    let filter = spec.filtered.then_some(processing.kalman);
    let mut estimators: HashMap<&str, PositionEstimator> = HashMap::new();
    let mut out = Vec::new();
    for (w, p) in matched {
        let class = scenario.class_of(&w.tag_id).expect("filtered above");
        let est = estimators
            .entry(&w.tag_id)
            .or_insert_with(|| PositionEstimator::new(Some(spec.antennas), filter));
        let Some(fix) = est.locate(map, &class.model, w) else { continue };
        let nearest_array = w
            .vectors
            .keys()
            .filter_map(|r| map.array(r))
            .map(|a| {
                let c = a.subset_centroid(spec.antennas);
                (p[0] - c[0]).hypot(p[1] - c[1])
            })
            .fold(f64::INFINITY, f64::min);
        out.push(PositionObs {
            nearest_array,
            error: fix.distance_to(p[0], p[1]),
        });
    }
    out
}
