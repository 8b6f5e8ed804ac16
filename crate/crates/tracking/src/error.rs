use std::net::SocketAddr;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] pipetrack_core::Error),

    #[error("store: {0}")]
    Store(#[from] rusqlite::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid record:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),

    #[error("invalid service configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{0} not found")]
    NotFound(String),

    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },

    #[error("tracking service stopped")]
    Stopped,
}
