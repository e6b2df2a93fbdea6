//! Stable exit codes, one per error class.

use std::process::ExitCode;

use credit_core::error::Error;
use thiserror::Error as ThisError;

pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const FORMAT: u8 = 4;
pub const DATA: u8 = 5;
pub const TRUNCATION: u8 = 6;
pub const PARAM: u8 = 7;
pub const SENSITIVITY: u8 = 8;
pub const DOMAIN: u8 = 9;
pub const MARGIN: u8 = 10;
pub const CALIBRATION: u8 = 11;
pub const RANK: u8 = 12;
pub const TIGHTNESS: u8 = 13;
pub const SELFCHECK: u8 = 14;
pub const CONFIG: u8 = 15;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("selfcheck failed: {0}")]
    Selfcheck(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e {
                Error::Io { .. } => IO,
                Error::Format(_) => FORMAT,
                Error::Data(_) => DATA,
                Error::Truncation { .. } => TRUNCATION,
                Error::Param(_) => PARAM,
                Error::Sensitivity(_) => SENSITIVITY,
                Error::Domain(_) => DOMAIN,
                Error::Margin(_) => MARGIN,
                Error::Calibration(_) => CALIBRATION,
                Error::Rank(_) => RANK,
                Error::TightnessViolation { .. } => TIGHTNESS,
            },
            CliError::Config(_) => CONFIG,
            CliError::Selfcheck(_) => SELFCHECK,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}
