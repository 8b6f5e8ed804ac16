//! Per-tag processing chains shared by the evaluator and the tracking
//! service: smoothing, diversity combining and positioning.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::PathLossModel;
use crate::diversity::{calibrate_threshold, Combiner, CombinerConfig, RssVector, Technique};
use crate::error::Result;
use crate::filters::{KalmanParams, KalmanState};
use crate::ingest::TagWindow;
use crate::locate::{confine_to_floor, estimate_distances, multilaterate_anchors, Anchor, FilterBank, FloorMap, Position};

/// Where the Kalman filter sits relative to the combiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    /// One filter per antenna, combiner sees smoothed readings.
    #[default]
    PerAntenna,
    /// A single filter on the combiner output.
    AfterCombine,
}

/// One row of the technique × antenna-count × filter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub technique: Technique,
    /// Use only the first `antennas` antennas of every array.
    pub antennas: usize,
    pub filtered: bool,
}

impl PipelineSpec {
    pub fn new(technique: Technique, antennas: usize, filtered: bool) -> Self {
        Self {
            technique,
            antennas,
            filtered,
        }
    }

    /// Full matrix over the given techniques and antenna counts, filtered and
    /// unfiltered.
    pub fn matrix(techniques: &[Technique], antennas: &[usize]) -> Vec<Self> {
        let mut out = Vec::new();
        for &a in antennas {
            for &t in techniques {
                for filtered in [false, true] {
                    out.push(Self::new(t, a, filtered));
                }
            }
        }
        out
    }
}

impl fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = if self.filtered { "filt. " } else { "" };
        write!(f, "{prefix}{} x{}", self.technique, self.antennas)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessingConfig {
    pub kalman: KalmanParams,
    pub combiner: CombinerConfig,
    pub filter_order: FilterOrder,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        Self {
            kalman: KalmanParams::default(),
            combiner: CombinerConfig::default(),
            filter_order: FilterOrder::PerAntenna,
        }
    }
}

/// Turns a reader's epoch vectors into one combined RSS per epoch.
#[derive(Debug, Clone)]
pub struct RangeEstimator {
    spec: PipelineSpec,
    cfg: ProcessingConfig,
    bank: FilterBank,
    post: KalmanState,
    combiner: Combiner,
}

impl RangeEstimator {
    pub fn new(spec: PipelineSpec, cfg: ProcessingConfig) -> Self {
        Self {
            spec,
            cfg,
            bank: FilterBank::new(cfg.kalman, spec.antennas),
            post: KalmanState::new(),
            combiner: Combiner::new(spec.technique, cfg.combiner),
        }
    }

    /// Sets the SSC/ScanC threshold from a history window of raw vectors.
    pub fn calibrate<'a, I>(&mut self, history: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a RssVector>,
    {
        let truncated: Vec<RssVector> = history.into_iter().map(|v| v.truncated(self.spec.antennas)).collect();
        let threshold = calibrate_threshold(&truncated, &self.cfg.combiner)?;
        self.combiner.set_threshold(threshold);
        Ok(threshold)
    }

    pub fn push(&mut self, v: &RssVector) -> Result<Option<f64>> {
        let mut v = v.truncated(self.spec.antennas);
        let per_antenna = self.spec.filtered && self.cfg.filter_order == FilterOrder::PerAntenna;
        if per_antenna {
            v = self.bank.apply(&v);
        }
        let Some(combined) = self.combiner.combine(&v)? else {
            return Ok(None);
        };
        if self.spec.filtered && self.cfg.filter_order == FilterOrder::AfterCombine {
            self.post = self.post.step(&self.cfg.kalman, combined.rss);
            return Ok(Some(self.post.mu));
        }
        Ok(Some(combined.rss))
    }
}

/// Positions one tag from the readings of every array that heard it.
#[derive(Debug, Clone)]
pub struct PositionEstimator {
    antennas: Option<usize>,
    filter: Option<KalmanParams>,
    banks: BTreeMap<String, FilterBank>,
}

impl PositionEstimator {
    /// `antennas` limits each array to its first n antennas; `filter`
    /// enables per-antenna smoothing.
    pub fn new(antennas: Option<usize>, filter: Option<KalmanParams>) -> Self {
        Self {
            antennas,
            filter,
            banks: BTreeMap::new(),
        }
    }

    pub fn locate(&mut self, map: &FloorMap, model: &PathLossModel, window: &TagWindow) -> Option<Position> {
        let mut anchors = Vec::new();
        let mut facing = None;
        // Anchors of the array contributing most; its line is the mirror axis.
        let mut widest: Vec<Anchor> = Vec::new();
        for (reader, v) in &window.vectors {
            let Some(array) = map.array(reader) else { continue };
            let n = self.antennas.unwrap_or(array.antennas.len()).min(array.antennas.len());
            let v = v.truncated(n);
            let distances = match self.filter {
                Some(params) => {
                    let bank = self
                        .banks
                        .entry(reader.clone())
                        .or_insert_with(|| FilterBank::new(params, n));
                    estimate_distances(model, &v, Some(bank))
                }
                None => estimate_distances(model, &v, None),
            };
            let before = anchors.len();
            anchors.extend(
                array
                    .antennas
                    .iter()
                    .zip(&distances)
                    .filter_map(|(a, d)| d.map(|distance| Anchor { position: *a, distance })),
            );
            if anchors.len() > before && facing.is_none() {
                facing = array.facing;
            }
            if anchors.len() - before > widest.len() {
                widest = anchors[before..].to_vec();
            }
        }
        let fix = multilaterate_anchors(&anchors, facing, map.tag_height)?.with_epoch(window.epoch);
        Some(confine_to_floor(map, &anchors, &widest, fix))
    }
}
