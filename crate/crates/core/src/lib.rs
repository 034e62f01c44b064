//! Real-time co-performance engine built around a mixture density recurrent
//! network.
//!
//! A human plays MIDI controls; the engine tracks them as a composite frame
//! of values in `[0, 1]`, conditions the network on every change, and when
//! the human falls silent it takes the lead, generating `(values, dt)`
//! frames that are routed back out as MIDI.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod frame;
pub mod mapping;
pub mod mdrnn;
pub mod midi;
pub mod netio;
pub mod service;

use std::path::PathBuf;

pub use config::{validate_config, ConfigError, EngineConfig, InteractionMode, RouteIn, RouteKind, RouteOut};
pub use frame::{clamp_frame, ContinuousFrame};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Checksum(String),
    #[error("{0}")]
    Weights(String),
    #[error("model file not found: {}", .0.display())]
    ModelNotFound(PathBuf),
    #[error("dataset is empty (need at least one sequence of two frames)")]
    EmptyDataset,
    #[error("non-finite loss during epoch {epoch}; try a lower learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("training: {0}")]
    Training(String),
    #[error("no MIDI device matches {selector:?}; available: {available:?}")]
    DeviceNotFound { selector: String, available: Vec<String> },
    #[error("message does not match route: {0}")]
    RouteMismatch(String),
    #[error("log: {0}")]
    Log(String),
    #[error("invalid OSC address {0:?}")]
    OscAddress(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
