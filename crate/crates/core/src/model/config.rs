use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::STEPS_PER_MEASURE;
use crate::corpus::{SpecialIds, CONTEXT_LEN};

/// Start token + three context measures + the masked fourth measure.
pub const INPUT_LEN: usize = 1 + CONTEXT_LEN + STEPS_PER_MEASURE;
/// Sequence position whose output predicts the first step of the fourth measure.
pub const FIRST_OUTPUT_POS: usize = CONTEXT_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_units: usize,
    pub layers: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub silent_loss_weight: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Trained with `<start>` in place of the QSC token.
    pub neutral_start: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 20,
            hidden_units: 192,
            layers: 7,
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8, 16, 32, 64],
            silent_loss_weight: 0.1,
            dropout_rate: 0.1,
            seed: 0,
            neutral_start: false,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        ModelConfig { vocab_size, ..Default::default() }
    }

    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size.saturating_sub(1)) * self.dilations.iter().sum::<usize>()
    }

    pub fn specials(&self) -> Result<SpecialIds, ModelError> {
        SpecialIds::for_vocab_size(self.vocab_size)
            .ok_or_else(|| ModelError::InvalidConfig(format!("vocab_size {} leaves no musical tokens", self.vocab_size)))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        self.specials()?;
        if self.embed_dim == 0 || self.hidden_units == 0 {
            return bad("embed_dim and hidden_units must be positive".into());
        }
        if self.layers == 0 || self.dilations.len() != self.layers {
            return bad(format!("{} dilations given for {} layers", self.dilations.len(), self.layers));
        }
        if self.kernel_size < 2 || self.dilations.contains(&0) {
            return bad("kernel_size must be at least 2 and dilations positive".into());
        }
        if self.receptive_field() < INPUT_LEN {
            return bad(format!("receptive field {} is shorter than the {INPUT_LEN}-token input", self.receptive_field()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.silent_loss_weight > 0.0 && self.silent_loss_weight.is_finite()) {
            return bad(format!("silent_loss_weight {} must be positive", self.silent_loss_weight));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Stop once the monitored perplexity reaches this value.
    pub target_perplexity: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 16, max_epochs: 69, patience: 10, learning_rate: 1e-3, clip_norm: 5.0, target_perplexity: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(ModelError::InvalidConfig("batch_size, max_epochs and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(ModelError::InvalidConfig("learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Log geometric-mean bounds that map a measure's chosen-token probabilities to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub log_g_lo: f64,
    pub log_g_hi: f64,
}

impl Calibration {
    /// Uniform guessing maps to 0 and certainty to 1.
    pub fn uninformed(vocab_size: usize) -> Self {
        Calibration { log_g_lo: -(vocab_size.max(2) as f64).ln(), log_g_hi: 0.0 }
    }

    /// 5th/95th percentiles of per-measure log geometric means. The lower
    /// bound never drops below uniform guessing.
    pub fn from_log_means(log_means: &[f64], vocab_size: usize) -> Self {
        use statrs::statistics::{Data, OrderStatistics};
        let finite: Vec<f64> = log_means.iter().copied().filter(|v| v.is_finite()).collect();
        let fallback = Self::uninformed(vocab_size);
        if finite.len() < 2 {
            return fallback;
        }
        let mut data = Data::new(finite);
        let lo = data.quantile(0.05).max(fallback.log_g_lo);
        let hi = data.quantile(0.95).min(0.0);
        if hi - lo < 1e-6 {
            return fallback;
        }
        Calibration { log_g_lo: lo, log_g_hi: hi }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_rf_255() {
        let c = ModelConfig::with_vocab(451);
        assert_eq!(c.receptive_field(), 255);
        c.validate().unwrap();
        assert_eq!(INPUT_LEN, 193);
    }

    #[test]
    fn short_receptive_field_rejected() {
        let c = ModelConfig { vocab_size: 12, layers: 3, dilations: vec![1, 2, 4], ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn calibration_clamps_low_end() {
        let c = Calibration::from_log_means(&[-10.0, -9.0, -1.0, -0.5, -0.2], 10);
        assert!(c.log_g_lo >= -(10f64).ln());
        assert!(c.log_g_hi <= 0.0 && c.log_g_hi > c.log_g_lo);
        assert_eq!(Calibration::from_log_means(&[-1.0], 10), Calibration::uninformed(10));
    }
}
