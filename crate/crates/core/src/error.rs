use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The point sits at or behind a projector's principal plane.
    #[error("degenerate geometry: projector-frame depth {depth:e}")]
    DegenerateGeometry { depth: f64 },

    #[error("pattern coordinate {coord} px lies off the pattern [0, {width}]")]
    OffPattern { coord: f64, width: f64 },

    #[error("log ratio {value} outside node range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("lookup table node ({0}, {1}) is not usable")]
    InvalidNode(usize, usize),

    #[error("lookup table build failed: {0}")]
    Build(String),

    /// No grid node of the rig can resolve depth.
    #[error("degenerate rig: {0}")]
    DegenerateRig(String),

    #[error("plane fit failed: {0}")]
    Fit(String),

    #[error("no jointly valid pixels to compare")]
    EmptyComparison,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
