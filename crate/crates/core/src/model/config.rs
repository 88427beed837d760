use serde::{Deserialize, Serialize};

use crate::chardata::{FIRST_CHAR_ID, PINYIN_LEN};
use crate::error::{Error, Result};
use crate::nn::FocalWeights;

/// Where and how the phonetic and graphemic features meet the semantic ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Concatenate after the transformer stack, project back to `d_semantic`.
    #[default]
    Posterior,
    /// Concatenate with the raw embeddings and project before the stack.
    Front,
    /// Project each modality to `d_semantic` and add.
    Align,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_semantic: usize,
    pub d_phonetic: usize,
    pub d_graphemic: usize,
    /// Widths of the two hidden layers of the graphemic feed-forward encoder.
    pub glyph_hidden: [usize; 2],
    pub layers: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub max_seq: usize,
    #[serde(default)]
    pub fusion: Fusion,
    /// When false the phonetic and graphemic features are zero.
    #[serde(default = "yes")]
    pub multimodal: bool,
    #[serde(default)]
    pub loss: FocalWeights,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// Full-size shape: 768 semantic + 6 phonetic + 128 graphemic = 902 fused.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_semantic: 768,
            d_phonetic: PINYIN_LEN,
            d_graphemic: 128,
            glyph_hidden: [512, 256],
            layers: 12,
            heads: 12,
            d_ffn: 3072,
            max_seq: 512,
            fusion: Fusion::Posterior,
            multimodal: true,
            loss: FocalWeights::default(),
        }
    }

    /// Laptop-sized default for training from scratch.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_semantic: 64,
            d_phonetic: PINYIN_LEN,
            d_graphemic: 32,
            glyph_hidden: [128, 64],
            layers: 2,
            heads: 2,
            d_ffn: 128,
            max_seq: 64,
            fusion: Fusion::Posterior,
            multimodal: true,
            loss: FocalWeights::default(),
        }
    }

    /// Tiny shape for finite-difference checks.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_semantic: 16,
            d_phonetic: PINYIN_LEN,
            d_graphemic: 4,
            glyph_hidden: [8, 8],
            layers: 1,
            heads: 2,
            d_ffn: 32,
            max_seq: 8,
            fusion: Fusion::Posterior,
            multimodal: true,
            loss: FocalWeights::default(),
        }
    }

    /// Width of the concatenated multimodal feature.
    pub fn fusion_input_width(&self) -> usize {
        self.d_semantic + self.d_phonetic + self.d_graphemic
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= FIRST_CHAR_ID {
            return Err(Error::Config(format!(
                "vocabulary of {} ids has no characters",
                self.vocab_size
            )));
        }
        let widths = [
            self.d_semantic,
            self.d_phonetic,
            self.d_graphemic,
            self.glyph_hidden[0],
            self.glyph_hidden[1],
            self.d_ffn,
            self.max_seq,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("all model widths must be positive".into()));
        }
        if self.heads == 0 || !self.d_semantic.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_semantic {} is not divisible by {} heads",
                self.d_semantic, self.heads
            )));
        }
        if self.loss.gamma < 0.0 {
            return Err(Error::Config("focal gamma must be >= 0".into()));
        }
        Ok(())
    }
}
