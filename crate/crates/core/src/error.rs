//! Crate-wide error type.

use std::path::PathBuf;

/// Everything that can go wrong when building grids, running solvers, or
/// reading and writing run artifacts.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Domain length is not an integer multiple of the cell size.
    #[error("domain {l} m is not an integer multiple of cell size {h} m")]
    NonDivisibleDomain { l: f64, h: f64 },

    /// A grid operation needs square cells but the grid has hx != hy.
    #[error("{op} requires square cells, grid has hx={hx} m, hy={hy} m")]
    NonSquareCells { op: &'static str, hx: f64, hy: f64 },

    /// A grid is too small for the requested construction.
    #[error("grid {nx}x{ny} is too small for {op} (need at least 2 cells per axis)")]
    GridTooSmall { op: &'static str, nx: usize, ny: usize },

    /// A field has the wrong length for the grid entity it claims to live on.
    #[error("field `{name}` has {got} values, expected {expected}")]
    FieldLength {
        name: &'static str,
        got: usize,
        expected: usize,
    },

    /// Invalid parameter value (negative viscosity bound, bad quantile, ...).
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: String,
    },

    /// Tracer bounds violated on input (concentration outside [0, 1], ...).
    #[error("tracer `{name}` out of bounds at cell {index}: {value}")]
    TracerBounds {
        name: &'static str,
        index: usize,
        value: f64,
    },

    /// The advective CFL number exceeds the stability limit.
    #[error("CFL violation: max |u| dt / h = {cfl:.3} > 1")]
    CflViolation { cfl: f64 },

    /// A solver produced a non-finite value.
    #[error("solver blow-up at step {step}: {detail}")]
    SolverBlowUp { step: usize, detail: String },

    /// Configuration file could not be parsed or fails schema validation.
    #[error("config error in {path}: {detail}")]
    Config { path: PathBuf, detail: String },

    /// A run directory is missing an expected artifact.
    #[error("missing artifact {path}")]
    MissingArtifact { path: PathBuf },

    /// Raw field file has a size that is not a whole number of f64 values
    /// or disagrees with its sidecar.
    #[error("corrupt field dump {path}: {detail}")]
    CorruptDump { path: PathBuf, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an I/O error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error indicates a bad configuration rather than a
    /// failure at run time; drivers map this to a distinct exit code.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidParameter { .. }
                | Error::NonDivisibleDomain { .. }
                | Error::NonSquareCells { .. }
                | Error::GridTooSmall { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
