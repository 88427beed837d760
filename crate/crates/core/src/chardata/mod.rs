//! Per-character resources: vocabulary with reserved ids, pinyin codes, and
//! 32×32 glyph bitmaps.
//!
//! Everything here is immutable once built and can be shared freely between
//! threads.

mod glyph;
mod pinyin;
mod raster;
mod vocab;

pub use glyph::{load_glyphs, write_glyphs, GlyphAtlas, GlyphBitmap, GLYPH_PIXELS, GLYPH_SIDE};
pub use pinyin::{load_pinyin_table, PinyinCode, PinyinTable, PINYIN_LEN};
pub use raster::rasterize_font;
pub use vocab::{build_vocab, Vocab, FIRST_CHAR_ID, KEEP_ID, MASK_ID, PAD_ID, RESERVED, UNK_ID};
