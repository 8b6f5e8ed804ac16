//! Signal processing and positioning for RFID-tagged pipe tracking.
//!
//! Readings flow from [`ingest`] (durable log, windowing) through
//! [`filters`] and [`diversity`] into range estimates via [`channel`], and
//! are turned into floor positions by [`locate`]. [`sim`] produces synthetic
//! streams with ground truth for evaluation.

pub mod channel;
pub mod diversity;
pub mod error;
pub mod filters;
pub mod ingest;
pub mod locate;
pub mod pipeline;
pub mod sim;

pub use channel::{fit_model, PathLossModel, RangingSample};
pub use diversity::{Combiner, CombinerConfig, RssVector, Technique};
pub use error::{Error, Result};
pub use filters::{KalmanParams, KalmanState};
pub use ingest::{RssSample, SampleLog, TagWindow, Windower};
pub use locate::{resolve_zone, AntennaArray, FloorMap, Geometry, Position, Zone};
pub use pipeline::{FilterOrder, PipelineSpec, PositionEstimator, ProcessingConfig, RangeEstimator};
