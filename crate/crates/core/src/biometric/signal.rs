use log::warn;
use serde::{Deserialize, Serialize};

use super::{BiometricError, QscLevel};

/// Nominal gap between wristband samples (4 Hz).
pub const SAMPLE_INTERVAL_S: f64 = 0.25;
pub const CALIBRATION_WINDOW_S: f64 = 120.0;
pub const WARMUP_S: f64 = 60.0;
/// Gaps longer than this are bridged by holding the last value.
pub const HOLD_GAP_S: f64 = 0.5;
/// Gaps longer than this are reported as a sensor dropout.
pub const DROPOUT_WARN_S: f64 = 5.0;
const MIN_SIGMA: f64 = 1e-9;
const EPS_S: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScSample {
    pub t_s: f64,
    pub microsiemens: f64,
}

impl ScSample {
    pub fn new(t_s: f64, microsiemens: f64) -> Self {
        ScSample { t_s, microsiemens }
    }
}

/// Skin-conductance spread measured before the session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub sigma: f64,
    pub window_s: f64,
    pub warmup_s: f64,
}

impl Baseline {
    pub fn from_sigma(sigma: f64) -> Result<Self, BiometricError> {
        if !sigma.is_finite() || sigma < MIN_SIGMA {
            return Err(BiometricError::DegenerateBaseline(sigma));
        }
        Ok(Baseline { sigma, window_s: CALIBRATION_WINDOW_S, warmup_s: WARMUP_S })
    }
}

/// Population standard deviation of the final 120 s of a calibration
/// recording that starts when the wristband goes on.
///
/// Each sample stands for one 0.25 s interval, so a 4 Hz recording of
/// 720 samples covers exactly 180 s (60 s warm-up plus the window).
pub fn baseline_sigma(samples: &[ScSample]) -> Result<Baseline, BiometricError> {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(BiometricError::InsufficientCalibration(0.0));
    };
    let session_start = last.t_s + SAMPLE_INTERVAL_S;
    let covered = session_start - first.t_s;
    if covered < WARMUP_S + CALIBRATION_WINDOW_S - EPS_S {
        return Err(BiometricError::InsufficientCalibration(covered));
    }
    let window_start = session_start - CALIBRATION_WINDOW_S - EPS_S;
    let window: Vec<f64> = samples.iter().filter(|s| s.t_s >= window_start).map(|s| s.microsiemens).collect();
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Baseline::from_sigma(var.sqrt())
}

/// Change in skin conductance in units of the baseline spread.
pub fn dsc(sc_now: f64, sc_prev: f64, baseline: &Baseline) -> Result<f64, BiometricError> {
    if !baseline.sigma.is_finite() || baseline.sigma < MIN_SIGMA {
        return Err(BiometricError::DegenerateBaseline(baseline.sigma));
    }
    Ok((sc_now - sc_prev) / baseline.sigma)
}

pub fn quantize_dsc(d: f64) -> Result<QscLevel, BiometricError> {
    if d.is_nan() {
        return Err(BiometricError::NotANumber);
    }
    Ok(if d >= 1.0 {
        QscLevel::High
    } else if d <= -1.0 {
        QscLevel::Low
    } else {
        QscLevel::Med
    })
}

/// QSC level at a measure boundary: ∂SC of the two most recent samples at or
/// before `t_s`. Degenerate situations answer `Med` and log a warning so the
/// music never waits on the sensor.
pub fn sample_at_measure_start(samples: &[ScSample], baseline: &Baseline, t_s: f64) -> QscLevel {
    let upto = samples.partition_point(|s| s.t_s <= t_s + EPS_S);
    if upto < 2 {
        warn!("QSC at t={t_s:.3}s: fewer than two sensor samples available, using Med");
        return QscLevel::Med;
    }
    let (prev, last) = (samples[upto - 2], samples[upto - 1]);
    let gap = t_s - last.t_s;
    if gap > HOLD_GAP_S {
        // Last-value hold: both ends of the difference are the same value.
        if gap > DROPOUT_WARN_S {
            warn!("QSC at t={t_s:.3}s: no sensor sample for {gap:.1}s, holding last value");
        }
        return QscLevel::Med;
    }
    match dsc(last.microsiemens, prev.microsiemens, baseline).and_then(quantize_dsc) {
        Ok(level) => level,
        Err(e) => {
            warn!("QSC at t={t_s:.3}s: {e}, using Med");
            QscLevel::Med
        }
    }
}
