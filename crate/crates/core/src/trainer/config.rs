use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Fusion, ModelConfig};
use crate::nn::{FocalWeights, OptimizerConfig};

/// Ablation switches applied on top of a model configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Zero the phonetic and graphemic features.
    pub no_multimodal: bool,
    /// Plain cross-entropy instead of focal loss.
    pub no_focal: bool,
    /// Fuse modalities before the transformer stack.
    pub front_fusion: bool,
    /// Project modalities to the semantic width and add.
    pub align: bool,
}

impl Ablation {
    pub fn validate(&self) -> Result<()> {
        if self.front_fusion && self.align {
            return Err(Error::Config("front_fusion and align cannot be combined".into()));
        }
        Ok(())
    }

    pub fn apply(&self, cfg: &mut ModelConfig) -> Result<()> {
        self.validate()?;
        if self.no_multimodal {
            cfg.multimodal = false;
        }
        if self.no_focal {
            cfg.loss = FocalWeights::cross_entropy();
        }
        if self.front_fusion {
            cfg.fusion = Fusion::Front;
        }
        if self.align {
            cfg.fusion = Fusion::Align;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Stop early once the epoch-mean loss drops below this.
    pub target_loss: Option<f64>,
    /// Probability of replacing each input id with UNK during training.
    /// Pinyin and glyph inputs are left in place.
    pub unk_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            target_loss: None,
            unk_rate: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.unk_rate) {
            return Err(Error::Config(format!("unk_rate {} outside [0, 1)", self.unk_rate)));
        }
        Ok(())
    }
}

/// One line of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss per scored position.
    pub mean_loss: f64,
    pub positions: usize,
    pub steps: usize,
    /// Target probabilities that fell below the log floor.
    pub clamped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// JSON lines, one per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("metrics serialize") + "\n")
            .collect()
    }
}
