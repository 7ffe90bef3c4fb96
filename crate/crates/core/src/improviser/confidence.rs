//! Confidence proxy: the normalized geometric mean of the probabilities the
//! model gave to the tokens it actually chose, smoothed per display frame.

use serde::{Deserialize, Serialize};

use super::conditions::VisCondition;
use super::EngineError;
use crate::model::{log_geometric_mean, Calibration};

/// Smoothing weight of the newest value per 0.5 s frame.
pub const EMA_ALPHA: f64 = 0.5;

/// `clamp((ln g − lo) / (hi − lo), 0, 1)` with `g` the geometric mean.
pub fn confidence_metric(chosen_probs: &[f64], cal: &Calibration) -> Result<f64, EngineError> {
    if chosen_probs.is_empty() {
        return Err(EngineError::Config("confidence of an empty measure".into()));
    }
    if let Some(p) = chosen_probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(EngineError::Config(format!("chosen probability {p} outside (0, 1]")));
    }
    let lg = log_geometric_mean(chosen_probs).map_err(|e| EngineError::Config(e.to_string()))?;
    let span = cal.log_g_hi - cal.log_g_lo;
    if !(span > 0.0) {
        return Err(EngineError::Config(format!("degenerate calibration {cal:?}")));
    }
    Ok(((lg - cal.log_g_lo) / span).clamp(0.0, 1.0))
}

/// Exponential moving average over display frames. The first update takes
/// the value as is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTracker {
    value: Option<f64>,
}

impl ConfidenceTracker {
    pub fn update(&mut self, target: f64) -> f64 {
        let v = match self.value {
            None => target,
            Some(prev) => EMA_ALPHA * target + (1.0 - EMA_ALPHA) * prev,
        };
        self.value = Some(v);
        v
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }
}

/// One confidence update as logged by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceFrame {
    pub t_ms: u64,
    pub c_raw: f64,
    pub c_display: f64,
    pub condition: VisCondition,
    pub featureless: bool,
    pub beat_phase: f64,
    pub tempo_bpm: f64,
}

/// Wire layout sent to the visualizer. Field order is part of the format.
#[derive(Serialize)]
struct WireFrame<'a> {
    t_ms: u64,
    c: f64,
    mode: &'a str,
    tempo: f64,
    beat_phase: f64,
}

impl ConfidenceFrame {
    pub fn to_wire_json(&self) -> String {
        serde_json::to_string(&WireFrame {
            t_ms: self.t_ms,
            c: self.c_display,
            mode: self.condition.as_str(),
            tempo: self.tempo_bpm,
            beat_phase: self.beat_phase,
        })
        .expect("frame serializes")
    }
}
