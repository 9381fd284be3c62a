use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error in {path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid polyhedron: {0}")]
    InvalidPolyhedron(String),

    #[error("degenerate polyhedron (volume {0})")]
    Degenerate(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too few samples: {got} (need at least {need})")]
    TooFewSamples { got: usize, need: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("corrupt reference cache: {0}")]
    CorruptCache(String),

    #[error("unsupported reference cache version {found} (expected {expected})")]
    CacheVersion { found: u32, expected: u32 },

    #[error("reference cache was built for a different shape")]
    ShapeMismatch,

    #[error("observation {index} (s = {value}) lies outside the reference support")]
    OutsideSupport { index: usize, value: f64 },

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("truncation at t = {0} removes all mass")]
    TruncationRemovesAllMass(f64),

    #[error("particle does not fit in the container (hitting probability {0} > 1)")]
    DoesNotFit(f64),

    #[error("distribution has no finite positive mean")]
    BadMean,
}
