//! Training loops: glyph pretraining, masked-LM pretraining of the
//! semantic-only baseline, and fine-tuning of the full model.

mod config;
mod eval;
mod finetune;
mod glyph;
mod mlm;

pub use config::{Ablation, EpochMetrics, TrainConfig, TrainReport};
pub use eval::{evaluate, Evaluation};
pub use finetune::train;
pub use glyph::{initial_glyph_encoder, pretrain_glyph, GlyphEncoder, GlyphPretrainConfig};
pub use mlm::{pretrain_mlm, restoration_accuracy, MlmConfig};
