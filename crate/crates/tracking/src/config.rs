use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use pipetrack_core::ingest::{DEFAULT_EPOCH_MS, DEFAULT_REORDER_EPOCHS};
use pipetrack_core::{FloorMap, PathLossModel, ProcessingConfig, Technique};
use serde::{Deserialize, Serialize};

use crate::cluster::DEFAULT_RADIUS_M;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::model::Rule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ports {
    /// HTTP query and stream API; 0 picks a free port.
    pub http: u16,
    /// Line-delimited sample feed over TCP, disabled when absent.
    pub ingest: Option<u16>,
}

impl Default for Ports {
    fn default() -> Self {
        Self {
            http: 8080,
            ingest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Relative paths resolve against the config file's directory.
    pub floor_map: PathBuf,
    pub model: PathLossModel,
    /// Combiner for the per-reader range reported with each fix.
    pub technique: Technique,
    pub epoch_ms: i64,
    pub reorder_epochs: i64,
    pub hysteresis_m: f64,
    pub bind: IpAddr,
    pub ports: Ports,
    /// Per-antenna Kalman smoothing before ranging. The constant-signal
    /// filter lags moving tags, so it is off unless asked for.
    pub filtered: bool,
    pub processing: ProcessingConfig,
    pub cluster_radius_m: f64,
    pub staleness_ms: i64,
    pub gap_ms: i64,
    pub database: Option<PathBuf>,
    pub pipes_file: Option<PathBuf>,
    /// Rules installed when the store holds none.
    pub rules: Vec<Rule>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        Self {
            floor_map: PathBuf::from("floor_map.json"),
            model: PathLossModel::new(-54.5, 1.8638),
            technique: Technique::Mrc,
            epoch_ms: DEFAULT_EPOCH_MS,
            reorder_epochs: DEFAULT_REORDER_EPOCHS,
            hysteresis_m: engine.hysteresis_m,
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            ports: Ports::default(),
            filtered: false,
            processing: ProcessingConfig::default(),
            cluster_radius_m: DEFAULT_RADIUS_M,
            staleness_ms: engine.staleness_ms,
            gap_ms: engine.gap_ms,
            database: None,
            pipes_file: None,
            rules: vec![Rule::any_transition()],
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ServiceConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.floor_map);
        cfg.database.as_mut().map(resolve);
        cfg.pipes_file.as_mut().map(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            hysteresis_m: self.hysteresis_m,
            staleness_ms: self.staleness_ms,
            gap_ms: self.gap_ms,
        }
    }

    pub fn http_addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.ports.http)
    }

    pub fn load_floor_map(&self) -> Result<FloorMap> {
        FloorMap::load(&self.floor_map).map_err(|e| match e {
            pipetrack_core::Error::Io(io) => Error::Config(vec![format!(
                "floor_map: cannot read {}: {io}",
                self.floor_map.display()
            )]),
            other => other.into(),
        })
    }

    /// Collects every problem.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.model.validate() {
            problems.push(format!("model: {e}"));
        }
        if self.epoch_ms <= 0 {
            problems.push(format!("epoch_ms: must be positive, got {}", self.epoch_ms));
        }
        if self.reorder_epochs < 0 {
            problems.push(format!("reorder_epochs: must be non-negative, got {}", self.reorder_epochs));
        }
        if !(self.hysteresis_m.is_finite() && self.hysteresis_m >= 0.0) {
            problems.push(format!("hysteresis_m: must be non-negative, got {}", self.hysteresis_m));
        }
        if !(self.cluster_radius_m.is_finite() && self.cluster_radius_m > 0.0) {
            problems.push(format!("cluster_radius_m: must be positive, got {}", self.cluster_radius_m));
        }
        if self.staleness_ms <= 0 || self.gap_ms <= 0 {
            problems.push("staleness_ms and gap_ms must be positive".to_string());
        }
        if let Err(e) = self.processing.kalman.validate() {
            problems.push(format!("processing.kalman: {e}"));
        }
        if self.ports.ingest.is_some_and(|p| p != 0 && p == self.ports.http) {
            problems.push(format!("ports: http and ingest both use {}", self.ports.http));
        }
        for r in &self.rules {
            if let Err(Error::Invalid(fields)) = r.validate() {
                problems.extend(fields.into_iter().map(|f| format!("rules[{}].{f}", r.rule_id)));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}
