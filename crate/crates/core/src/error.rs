use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("distance must be positive and finite, got {0} m")]
    NonPositiveDistance(f64),

    #[error("invalid path-loss model: {0}")]
    InvalidModel(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("kalman state used before initialization")]
    Uninitialized,

    #[error("reading {reading} dBm on antenna {antenna} is not above rss_min {rss_min} dBm")]
    BelowFloor { antenna: usize, reading: f64, rss_min: f64 },

    #[error("threshold calibration needs at least 2 present readings, got {0}")]
    Calibration(usize),

    #[error("invalid floor map:\n  {}", .0.join("\n  "))]
    FloorMap(Vec<String>),

    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Scenario(Vec<String>),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown technique `{0}` (expected egc, mrc, sc, ssc or scanc)")]
    UnknownTechnique(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
