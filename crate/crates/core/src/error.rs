use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solvers, transforms and reconstruction routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: expected {expected}, got {got} ({what})")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid angular pair ({0}, {1}); need 1 <= i < j <= 3")]
    InvalidAxisPair(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} = {value} is not aligned with grid spacing {h}")]
    Misaligned { what: &'static str, value: f64, h: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("solver diverged at level {level}: residual {residual:e}")]
    Divergence { level: usize, residual: f64 },
    #[error("mode-reduction coefficient {coefficient} unsupported for degree {degree}")]
    UnsupportedCoefficient { degree: usize, coefficient: f64 },
    #[error("Q_gamma undefined: denominator vanishes at every sampled radius")]
    DegenerateDenominator,
    #[error("layer stripping: time window exhausted before depth {depth} (need (T-R)/2 >= 2h)")]
    WindowExhausted { depth: f64 },
    #[error("layer {layer} (mode {mode:?}): {reason}")]
    LayerFailure {
        layer: usize,
        mode: Option<usize>,
        reason: String,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("stability ratio undefined: traces agree but potentials differ (numerator {numerator:e})")]
    Instability { numerator: f64 },
    #[error("calibration rejected: relative residual {residual:e} exceeds {limit:e}")]
    Calibration { residual: f64, limit: f64 },
    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("missing section `{section}` in {path}")]
    MissingSection { path: PathBuf, section: String },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
