//! The correction model: phonetic, graphemic and semantic encoders, a
//! forget-gated embedding residual, non-aligned late fusion, and a per-position
//! output head whose index 1 means "keep the source character".

mod checkpoint;
mod config;
mod decode;
mod nambert;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_VERSION,
    GLYPH_ENCODER_KIND, MODEL_KIND,
};
pub use config::{Fusion, ModelConfig};
pub use decode::decode;
pub(crate) use nambert::graphemic_forward;
pub use nambert::save_glyph_encoder;
pub use nambert::{NamBert, Trace};
