use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
///
/// The CLI maps [`Error::is_config`] variants to exit code 2 and everything
/// else to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter combination that can never run.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed absorption data.
    #[error("{path}: row {row}: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        message: String,
    },

    /// The observation window cannot hold the propagated pulse.
    #[error("observation window too short: need at least {required:.6e} s, have {available:.6e} s")]
    WindowOverflow { required: f64, available: f64 },

    /// An interval or time that falls outside a trace.
    #[error("interval [{start:.6e}, {end:.6e}] s is outside trace [{trace_start:.6e}, {trace_end:.6e}] s")]
    OutsideTrace {
        start: f64,
        end: f64,
        trace_start: f64,
        trace_end: f64,
    },

    /// Degenerate base station geometry.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Inconsistent result collection passed to a summary.
    #[error("result set error: {0}")]
    Results(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that a corrected config file would avoid.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Load { .. } | Error::WindowOverflow { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
