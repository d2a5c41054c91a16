use std::io;

use thiserror::Error;

/// Errors raised anywhere in the correction flow.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("geometry error in polygon {polygon}: {reason}")]
    Geometry { polygon: usize, reason: String },
    #[error("region error: {0}")]
    Region(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("resolution mismatch: {left} px/nm vs {right} px/nm")]
    ResolutionMismatch { left: f64, right: f64 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("optimization diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("coordinate out of bounds: {0}")]
    Coord(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch for {what}: expected {expected}, found {found}")]
    Checksum {
        what: String,
        expected: String,
        found: String,
    },
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
