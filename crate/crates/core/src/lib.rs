//! Multimodal Chinese spelling correction.
//!
//! A character-level corrector that combines pinyin, glyph bitmaps and a
//! small transformer, trained from scratch on the CPU, plus the tooling to
//! evaluate it: similarity-binned confusion-set substitution, sentence-level
//! metrics, and a client for comparing against chat-completion models.

pub mod chardata;
pub mod corpus;
pub mod error;
pub mod llm;
pub mod macu;
pub mod model;
pub mod nn;
pub mod par;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
