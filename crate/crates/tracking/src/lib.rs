//! Pipe tracking service: registry, zone rules, events and the live
//! query/stream API consumed by the floor-map dashboard.

pub mod cluster;
pub mod config;
pub mod engine;
pub mod error;
pub mod history;
pub mod model;
pub mod server;
pub mod store;
pub mod tracker;

pub use cluster::{cluster_positions, Cluster};
pub use config::{Ports, ServiceConfig};
pub use engine::{Engine, EngineConfig, Occupancy, OccupancySummary};
pub use error::{Error, Result};
pub use model::{Event, EventKind, PipeRecord, PipeStatus, Rule, RuleKind, RuleParams};
pub use server::{build_tracker, serve, start, RunningService};
pub use store::{FilePipeInfo, PipeInfoSource, Store};
pub use tracker::{PositionUpdate, Snapshot, StreamMessage, Tracker};
