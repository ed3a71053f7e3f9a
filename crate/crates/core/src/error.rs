use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{quantity} = {value} is outside its domain {domain}")]
    Domain {
        quantity: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state of charge saturated at {soc} (must stay within [0, 1])")]
    SocSaturation { soc: f64 },

    #[error("protocol violation: cell {cell} state of charge saturated at {soc}")]
    CellSaturation { cell: usize, soc: f64 },

    #[error("ADC channel {channel} saturated: scaled input {volts} V exceeds full scale {full_scale} V")]
    AdcSaturation {
        channel: usize,
        volts: f64,
        full_scale: f64,
    },

    #[error("CAN frame: {0}")]
    Frame(String),

    #[error("plan: {0}")]
    Plan(String),

    #[error("diagnostics: {0}")]
    Diagnostics(String),

    #[error("cell {cell} never crossed the {bound} bound {volts} V")]
    BoundNotCrossed {
        cell: usize,
        bound: &'static str,
        volts: f64,
    },

    #[error("R-T fit failed at SOC {soc}: {reason} (rmse {rmse_mohm} mΩ)")]
    FitFailed {
        soc: f64,
        reason: String,
        rmse_mohm: f64,
    },

    #[error("{path}:{line}: {message}")]
    LogFormat {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("log schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: String, expected: u32 },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(quantity: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain {
            quantity,
            value,
            domain,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
