//! Spatial-diversity combining of per-antenna RSS readings.
//!
//! Two combiners (EGC, MRC) blend every present reading of an epoch; three
//! selectors (SC, SSC, ScanC) pick a single antenna. SSC and ScanC carry a
//! [`SwitchState`] from one epoch to the next.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One epoch of readings for a single antenna array. `readings[i]` is the
/// value seen by antenna `i`, `None` when it heard nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssVector {
    pub epoch: i64,
    pub readings: Vec<Option<f64>>,
}

impl RssVector {
    pub fn new(epoch: i64, readings: Vec<Option<f64>>) -> Self {
        Self { epoch, readings }
    }

    /// Vector with every antenna present.
    pub fn full(epoch: i64, readings: &[f64]) -> Self {
        Self::new(epoch, readings.iter().copied().map(Some).collect())
    }

    pub fn antenna_count(&self) -> usize {
        self.readings.len()
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.readings
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|v| (i, v)))
    }

    pub fn present_count(&self) -> usize {
        self.readings.iter().filter(|r| r.is_some()).count()
    }

    /// Keeps only the first `n` antennas.
    pub fn truncated(&self, n: usize) -> Self {
        Self::new(self.epoch, self.readings.iter().take(n).copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombinerConfig {
    /// Lowest obtainable reading; MRC weights are measured from here, dBm.
    pub rss_min: f64,
    /// SSC/ScanC switching threshold, dBm.
    pub threshold: f64,
    /// Standard deviations below the mean used by [`calibrate_threshold`].
    pub calibration_k: f64,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self {
            rss_min: -90.0,
            threshold: -70.0,
            calibration_k: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Egc,
    Mrc,
    Sc,
    Ssc,
    Scanc,
}

impl Technique {
    pub const ALL: [Technique; 5] = [
        Technique::Egc,
        Technique::Mrc,
        Technique::Sc,
        Technique::Ssc,
        Technique::Scanc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::Egc => "egc",
            Technique::Mrc => "mrc",
            Technique::Sc => "sc",
            Technique::Ssc => "ssc",
            Technique::Scanc => "scanc",
        }
    }

    pub fn is_switching(self) -> bool {
        matches!(self, Technique::Ssc | Technique::Scanc)
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "egc" | "mean" => Ok(Technique::Egc),
            "mrc" => Ok(Technique::Mrc),
            "sc" => Ok(Technique::Sc),
            "ssc" => Ok(Technique::Ssc),
            "scanc" => Ok(Technique::Scanc),
            _ => Err(Error::UnknownTechnique(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchState {
    pub current_antenna: usize,
    pub threshold: f64,
}

impl SwitchState {
    pub fn new(threshold: f64) -> Self {
        Self {
            current_antenna: 0,
            threshold,
        }
    }

    fn passes(&self, reading: Option<f64>) -> bool {
        reading.is_some_and(|r| r >= self.threshold)
    }
}

/// Equal-gain combining: mean of the present readings.
pub fn egc(v: &RssVector) -> Option<f64> {
    let (sum, count) = v
        .present()
        .fold((0.0, 0usize), |(s, c), (_, r)| (s + r, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Maximum-ratio combining: readings weighted by their height above
/// `cfg.rss_min`, weights normalized to one.
pub fn mrc(v: &RssVector, cfg: &CombinerConfig) -> Result<Option<f64>> {
    let mut total_weight = 0.0;
    for (antenna, r) in v.present() {
        if r <= cfg.rss_min {
            return Err(Error::BelowFloor {
                antenna,
                reading: r,
                rss_min: cfg.rss_min,
            });
        }
        total_weight += r - cfg.rss_min;
    }
    if total_weight == 0.0 {
        return Ok(None);
    }
    let combined = v
        .present()
        .map(|(_, r)| (r - cfg.rss_min) / total_weight * r)
        .sum();
    Ok(Some(combined))
}

/// Selection combining: strongest reading and the antenna that saw it.
/// Ties go to the lowest antenna index.
pub fn sc(v: &RssVector) -> Option<(f64, usize)> {
    v.present().fold(None, |best, (i, r)| match best {
        Some((b, _)) if b >= r => best,
        _ => Some((r, i)),
    })
}

/// Switch-and-stay: keep the current antenna while it reads at or above the
/// threshold, otherwise move blindly to the next one and report whatever it
/// reads.
pub fn ssc(state: SwitchState, v: &RssVector) -> (Option<f64>, SwitchState) {
    let n = v.antenna_count();
    if n == 0 {
        return (None, state);
    }
    let current = state.current_antenna % n;
    let reading = v.readings[current];
    if state.passes(reading) {
        return (reading, SwitchState { current_antenna: current, ..state });
    }
    let next = (current + 1) % n;
    (v.readings[next], SwitchState { current_antenna: next, ..state })
}

/// Scanning combiner: like SSC, but after a miss it checks the other antennas
/// in cyclic order and settles on the first that meets the threshold. If none
/// does it stays where it was.
pub fn scanc(state: SwitchState, v: &RssVector) -> (Option<f64>, SwitchState) {
    let n = v.antenna_count();
    if n == 0 {
        return (None, state);
    }
    let current = state.current_antenna % n;
    if state.passes(v.readings[current]) {
        return (v.readings[current], SwitchState { current_antenna: current, ..state });
    }
    for step in 1..n {
        let candidate = (current + step) % n;
        if state.passes(v.readings[candidate]) {
            return (
                v.readings[candidate],
                SwitchState { current_antenna: candidate, ..state },
            );
        }
    }
    (v.readings[current], SwitchState { current_antenna: current, ..state })
}

/// Switching threshold from a window of history: mean of all present
/// readings minus `calibration_k` population standard deviations.
pub fn calibrate_threshold<'a, I>(window: I, cfg: &CombinerConfig) -> Result<f64>
where
    I: IntoIterator<Item = &'a RssVector>,
{
    let values: Vec<f64> = window
        .into_iter()
        .flat_map(|v| v.present().map(|(_, r)| r))
        .collect();
    if values.len() < 2 {
        return Err(Error::Calibration(values.len()));
    }
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count;
    Ok(mean - cfg.calibration_k * var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined {
    pub rss: f64,
    /// Antenna chosen by a selection technique; `None` for EGC/MRC.
    pub antenna: Option<usize>,
}

/// Applies one technique epoch after epoch, holding the switch state the
/// SSC/ScanC selectors need.
#[derive(Debug, Clone)]
pub struct Combiner {
    technique: Technique,
    cfg: CombinerConfig,
    switch: SwitchState,
}

impl Combiner {
    pub fn new(technique: Technique, cfg: CombinerConfig) -> Self {
        Self {
            technique,
            cfg,
            switch: SwitchState::new(cfg.threshold),
        }
    }

    pub fn technique(&self) -> Technique {
        self.technique
    }

    pub fn switch_state(&self) -> SwitchState {
        self.switch
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.cfg.threshold = threshold;
        self.switch.threshold = threshold;
    }

    pub fn combine(&mut self, v: &RssVector) -> Result<Option<Combined>> {
        let out = match self.technique {
            Technique::Egc => egc(v).map(|rss| Combined { rss, antenna: None }),
            Technique::Mrc => mrc(v, &self.cfg)?.map(|rss| Combined { rss, antenna: None }),
            Technique::Sc => sc(v).map(|(rss, a)| Combined { rss, antenna: Some(a) }),
            Technique::Ssc | Technique::Scanc => {
                let step = if self.technique == Technique::Ssc { ssc } else { scanc };
                let (rss, next) = step(self.switch, v);
                self.switch = next;
                rss.map(|rss| Combined {
                    rss,
                    antenna: Some(next.current_antenna),
                })
            }
        };
        Ok(out)
    }
}
