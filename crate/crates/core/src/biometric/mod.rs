//! Skin-conductance channel from the performer to the machine: baseline
//! calibration, normalized change (∂SC), three-level quantization (QSC) and
//! the request/response service that hands levels to the engine.

mod service;
mod signal;
mod stream;

pub use service::{
    FixedQsc, LoopbackQsc, OscQscClient, QscReply, QscServer, QscSource, ScriptedQsc, DEFAULT_QUERY_TIMEOUT, QUERY_ADDRESS, VALUE_ADDRESS,
};
pub use signal::{
    baseline_sigma, dsc, quantize_dsc, sample_at_measure_start, Baseline, ScSample, CALIBRATION_WINDOW_S, DROPOUT_WARN_S, HOLD_GAP_S,
    SAMPLE_INTERVAL_S, WARMUP_S,
};
pub use stream::{parse_sc_line, read_sc_csv, spawn_tcp_ingest, ScStream, SimulatedSensor};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netio::NetError;

/// Quantized change in skin conductance. Ordered `Low < Med < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QscLevel {
    Low,
    Med,
    High,
}

impl QscLevel {
    pub const ALL: [QscLevel; 3] = [QscLevel::Low, QscLevel::Med, QscLevel::High];

    /// High and Low trade places; Med is fixed. An involution.
    pub fn swapped(self) -> Self {
        match self {
            QscLevel::High => QscLevel::Low,
            QscLevel::Low => QscLevel::High,
            QscLevel::Med => QscLevel::Med,
        }
    }
}

impl fmt::Display for QscLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QscLevel::High => "High",
            QscLevel::Med => "Med",
            QscLevel::Low => "Low",
        })
    }
}

impl FromStr for QscLevel {
    type Err = BiometricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "High" => Ok(QscLevel::High),
            "Med" => Ok(QscLevel::Med),
            "Low" => Ok(QscLevel::Low),
            other => Err(BiometricError::UnknownLevel(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum BiometricError {
    #[error("calibration needs 180 s of samples (60 s warm-up + 120 s window), got {0:.2} s")]
    InsufficientCalibration(f64),
    #[error("baseline standard deviation {0:e} is too small (flat signal)")]
    DegenerateBaseline(f64),
    #[error("∂SC is NaN")]
    NotANumber,
    #[error("unknown QSC level '{0}'")]
    UnknownLevel(String),
    #[error("invalid sensor sample: {0}")]
    InvalidSample(String),
    #[error("sample at {next} s does not follow {prev} s")]
    NonMonotonic { prev: f64, next: f64 },
    #[error("biometric service timed out")]
    Timeout,
    #[error("biometric service: {0}")]
    Service(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
