//! TOML configuration. Every section is optional; missing keys take the
//! library defaults. Command-line flags and environment variables are applied
//! on top by the commands.

use std::path::Path;

use duet_core::corpus::{SplitFractions, DEFAULT_MIN_COUNT};
use duet_core::improviser::SessionConfig;
use duet_core::model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::failure::{Classify, CmdResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuetConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub session: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Click-track tempo of imported recordings.
    pub tempo_bpm: f64,
    pub min_count: u64,
    pub fractions: SplitFractions,
    /// Measures between consecutive training windows.
    pub stride: usize,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { tempo_bpm: 120.0, min_count: DEFAULT_MIN_COUNT, fractions: SplitFractions::default(), stride: 1, split_seed: 0 }
    }
}

/// Grid for `train --sweep`. An empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub embed_dim: Vec<usize>,
    pub hidden_units: Vec<usize>,
    /// Dilations double from 1 for each layer count.
    pub layers: Vec<usize>,
    pub dropout_rate: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub silent_loss_weight: Vec<f64>,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.embed_dim.is_empty()
            && self.hidden_units.is_empty()
            && self.layers.is_empty()
            && self.dropout_rate.is_empty()
            && self.learning_rate.is_empty()
            && self.silent_loss_weight.is_empty()
    }

    /// Cartesian product over the listed dimensions, in declaration order.
    pub fn points(&self, model: &ModelConfig, train: &TrainConfig) -> Vec<SweepPoint> {
        fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let mut out = Vec::new();
        for e in axis(&self.embed_dim, model.embed_dim) {
            for h in axis(&self.hidden_units, model.hidden_units) {
                for l in axis(&self.layers, model.layers) {
                    for d in axis(&self.dropout_rate, model.dropout_rate) {
                        for lr in axis(&self.learning_rate, train.learning_rate) {
                            for w in axis(&self.silent_loss_weight, model.silent_loss_weight) {
                                let dilations =
                                    if l == model.layers { model.dilations.clone() } else { (0..l).map(|i| 1usize << i).collect() };
                                out.push(SweepPoint {
                                    model: ModelConfig {
                                        embed_dim: e,
                                        hidden_units: h,
                                        layers: l,
                                        dilations,
                                        dropout_rate: d,
                                        silent_loss_weight: w,
                                        ..model.clone()
                                    },
                                    train: TrainConfig { learning_rate: lr, ..train.clone() },
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn load_config(path: Option<&Path>) -> CmdResult<DuetConfig> {
    let Some(path) = path else {
        return Ok(DuetConfig::default());
    };
    let text = std::fs::read_to_string(path).usage(format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).usage(format!("invalid config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let c: DuetConfig = toml::from_str("[train]\nmax_epochs = 5\n[session]\nvis_condition = \"absent\"\n").unwrap();
        assert_eq!(c.train.max_epochs, 5);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.model.hidden_units, 192);
        assert_eq!(c.data.min_count, 20);
        assert_eq!(c.session.tempo_bpm, 120.0);
        assert_eq!(c.session.vis_condition, duet_core::improviser::VisCondition::Absent);
        assert!(toml::from_str::<DuetConfig>("[train]\nepochs = 5\n").is_err());
    }

    #[test]
    fn sweep_grid_is_a_cartesian_product() {
        let s = SweepConfig { hidden_units: vec![32, 64], layers: vec![7, 8], learning_rate: vec![1e-3, 3e-3], ..Default::default() };
        let pts = s.points(&ModelConfig::default(), &TrainConfig::default());
        assert_eq!(pts.len(), 8);
        assert!(pts.iter().all(|p| p.model.dilations.len() == p.model.layers));
        assert_eq!(pts[2].model.dilations.last(), Some(&128));
        assert!(SweepConfig::default().is_empty());
        assert_eq!(SweepConfig::default().points(&ModelConfig::default(), &TrainConfig::default()).len(), 1);
    }
}
