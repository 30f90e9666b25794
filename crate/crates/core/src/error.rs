use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },

    #[error("cannot parse {text:?} at line {line}, column {column}")]
    Parse {
        line: usize,
        column: usize,
        text: String,
    },

    #[error("grid of {rows}x{cols} is too small")]
    TooSmall { rows: usize, cols: usize },

    #[error("profile peak is zero, cannot normalize")]
    ZeroProfile,

    #[error("window size {0} must be odd and at least 3")]
    BadWindow(usize),

    #[error("gaussian sigma must be positive, got {0}")]
    BadSigma(f64),

    #[error("invalid parameters: {0}")]
    BadParams(String),

    #[error("family needs nonnegative samples; shift the data first")]
    NeedsShift,

    #[error("samples have zero variance")]
    DegenerateSamples,

    #[error("total beam intensity is zero")]
    EmptyBeam,

    #[error("emittance is zero, Twiss parameters undefined")]
    DegenerateEmittance,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("mixture component {0} has a singular covariance")]
    SingularComponent(usize),

    #[error("input image is degenerate (max == min)")]
    DegenerateInput,

    #[error("training diverged at iteration {iteration}")]
    DivergedTraining { iteration: usize },

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("mask fraction {0} outside (0, 0.5)")]
    BadFraction(f64),

    #[error("cannot split {total} pixels into {k} folds")]
    BadK { k: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
