use std::collections::BTreeMap;
use std::fmt;

use pipetrack_core::Position;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lifecycle stage of a pipe on the shop floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipeStatus {
    #[default]
    Received,
    InProcess,
    Finished,
    Dispatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeRecord {
    pub pipe_id: String,
    #[serde(default)]
    pub material: String,
    #[serde(default)]
    pub diameter_mm: f64,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub status: PipeStatus,
    /// False for stubs created when an unknown tag is first located.
    #[serde(default = "yes")]
    pub registered: bool,
    /// `None` while the pipe is outside every zone.
    #[serde(default)]
    pub current_zone: Option<String>,
    #[serde(default)]
    pub last_position: Option<Position>,
}

fn yes() -> bool {
    true
}

impl PipeRecord {
    pub fn new(pipe_id: impl Into<String>, material: impl Into<String>, diameter_mm: f64) -> Self {
        Self {
            pipe_id: pipe_id.into(),
            material: material.into(),
            diameter_mm,
            description: String::new(),
            status: PipeStatus::Received,
            registered: true,
            current_zone: None,
            last_position: None,
        }
    }

    pub fn stub(pipe_id: impl Into<String>) -> Self {
        Self {
            registered: false,
            ..Self::new(pipe_id, "", 0.0)
        }
    }

    /// Lists every offending field.
    pub fn validate(&self) -> Result<()> {
        let mut fields = Vec::new();
        if self.pipe_id.trim().is_empty() {
            fields.push("pipe_id: must not be empty".to_string());
        }
        if !(self.diameter_mm.is_finite() && self.diameter_mm >= 0.0) {
            fields.push(format!("diameter_mm: must be a non-negative number, got {}", self.diameter_mm));
        }
        if self.registered && self.material.trim().is_empty() {
            fields.push("material: required for registered pipes".to_string());
        }
        if let Some(p) = &self.last_position {
            if !(p.x.is_finite() && p.y.is_finite()) {
                fields.push("last_position: coordinates must be finite".to_string());
            }
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(fields))
        }
    }

    /// Timestamp of the latest fix.
    pub fn last_seen(&self) -> Option<i64> {
        self.last_position.map(|p| p.epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    ZoneTransition,
    DwellThreshold,
    OccupancyThreshold,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::ZoneTransition => "zone_transition",
            RuleKind::DwellThreshold => "dwell_threshold",
            RuleKind::OccupancyThreshold => "occupancy_threshold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zone_transition" => Some(RuleKind::ZoneTransition),
            "dwell_threshold" => Some(RuleKind::DwellThreshold),
            "occupancy_threshold" => Some(RuleKind::OccupancyThreshold),
            _ => None,
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleParams {
    /// Zones the rule watches; empty watches every zone.
    pub zones: Vec<String>,
    pub duration_ms: Option<i64>,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: String,
    pub kind: RuleKind,
    #[serde(default)]
    pub params: RuleParams,
    #[serde(default = "yes")]
    pub enabled: bool,
}

impl Rule {
    /// Transition rule over every zone.
    pub fn any_transition() -> Self {
        Self {
            rule_id: "any-transition".into(),
            kind: RuleKind::ZoneTransition,
            params: RuleParams::default(),
            enabled: true,
        }
    }

    pub fn dwell(rule_id: impl Into<String>, zones: Vec<String>, duration_ms: i64) -> Self {
        Self {
            rule_id: rule_id.into(),
            kind: RuleKind::DwellThreshold,
            params: RuleParams {
                zones,
                duration_ms: Some(duration_ms),
                count: None,
            },
            enabled: true,
        }
    }

    pub fn occupancy(rule_id: impl Into<String>, zones: Vec<String>, count: usize) -> Self {
        Self {
            rule_id: rule_id.into(),
            kind: RuleKind::OccupancyThreshold,
            params: RuleParams {
                zones,
                duration_ms: None,
                count: Some(count),
            },
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut fields = Vec::new();
        if self.rule_id.trim().is_empty() {
            fields.push("rule_id: must not be empty".to_string());
        }
        match self.kind {
            RuleKind::ZoneTransition => {}
            RuleKind::DwellThreshold => match self.params.duration_ms {
                Some(d) if d > 0 => {}
                _ => fields.push("params.duration_ms: positive value required for dwell_threshold".into()),
            },
            RuleKind::OccupancyThreshold => match self.params.count {
                Some(c) if c > 0 => {}
                _ => fields.push("params.count: positive value required for occupancy_threshold".into()),
            },
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(fields))
        }
    }

    pub fn watches(&self, zone: Option<&str>) -> bool {
        self.params.zones.is_empty() || zone.is_some_and(|z| self.params.zones.iter().any(|w| w == z))
    }
}

pub type EventKind = RuleKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u64,
    pub pipe_id: String,
    pub kind: EventKind,
    /// `None` stands for outside every zone.
    pub from_zone: Option<String>,
    pub to_zone: Option<String>,
    /// ms
    pub t: i64,
    #[serde(default)]
    pub payload: BTreeMap<String, serde_json::Value>,
}
