use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the verification pipeline can report.
///
/// Variants map one-to-one onto error classes; the CLI turns each class into
/// a distinct exit code, so new variants must be added there too.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed embedding file: {0}")]
    Format(String),

    #[error("invalid embedding data: {0}")]
    Data(String),

    #[error("payload length mismatch: header declares {expected} payload bytes, found {found}")]
    Truncation { expected: u64, found: u64 },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("sensitivity precondition violated: {0}")]
    Sensitivity(String),

    #[error("argument outside function domain: {0}")]
    Domain(String),

    #[error("error bound is vacuous: {0}")]
    Margin(String),

    #[error("sigma calibration failed: {0}")]
    Calibration(String),

    #[error("least-squares fit is underdetermined: {0}")]
    Rank(String),

    #[error("tightness violated for delta={delta}, sigma={sigma}: {reason}")]
    TightnessViolation {
        delta: f64,
        sigma: f64,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $err:expr) => {
        if !$cond {
            return Err($err);
        }
    };
}
pub(crate) use ensure;
