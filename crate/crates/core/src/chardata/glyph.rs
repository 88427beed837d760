use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const GLYPH_SIDE: usize = 32;
pub const GLYPH_PIXELS: usize = GLYPH_SIDE * GLYPH_SIDE;
const MAGIC: &[u8; 4] = b"GLY1";
const RECORD_LEN: usize = 4 + GLYPH_PIXELS;

/// 32×32 grayscale bitmap, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphBitmap {
    pixels: Vec<f32>,
}

impl Default for GlyphBitmap {
    fn default() -> Self {
        Self::blank()
    }
}

impl GlyphBitmap {
    pub fn blank() -> Self {
        Self {
            pixels: vec![0.0; GLYPH_PIXELS],
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != GLYPH_PIXELS {
            return Err(Error::Format(format!(
                "glyph needs {GLYPH_PIXELS} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(Self {
            pixels: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    pub fn from_pixels(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != GLYPH_PIXELS {
            return Err(Error::Format(format!(
                "glyph needs {GLYPH_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Format(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * GLYPH_SIDE + col]
    }

    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0.0)
    }
}

/// Character → bitmap lookup; unknown characters map to the blank bitmap.
#[derive(Clone, Debug, Default)]
pub struct GlyphAtlas {
    map: HashMap<char, GlyphBitmap>,
    warnings: Vec<String>,
    blank: GlyphBitmap,
}

pub fn load_glyphs(path: impl AsRef<Path>) -> Result<GlyphAtlas> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    GlyphAtlas::parse(&bytes)
}

/// Write `GLY1`: magic, little-endian `u32` count, then per record a `u32`
/// codepoint and 1024 grayscale bytes. Records are sorted by codepoint.
pub fn write_glyphs(path: impl AsRef<Path>, atlas: &GlyphAtlas) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, atlas.to_bytes()).map_err(|e| Error::io(path, e))
}

impl GlyphAtlas {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing GLY1 magic".into()));
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != count * RECORD_LEN {
            return Err(Error::Format(format!(
                "GLY1 declares {count} records ({} bytes) but has {} bytes of data",
                count * RECORD_LEN,
                body.len()
            )));
        }
        let mut atlas = GlyphAtlas::default();
        for rec in body.chunks_exact(RECORD_LEN) {
            let cp = u32::from_le_bytes(rec[..4].try_into().unwrap());
            let c = char::from_u32(cp).ok_or_else(|| Error::Format(format!("invalid codepoint U+{cp:04X}")))?;
            let bitmap = GlyphBitmap::from_bytes(&rec[4..])?;
            if atlas.map.insert(c, bitmap).is_some() {
                let msg = format!("duplicate glyph for U+{cp:04X}, later record wins");
                log::warn!("{msg}");
                atlas.warnings.push(msg);
            }
        }
        Ok(atlas)
    }

    pub fn insert(&mut self, c: char, bitmap: GlyphBitmap) -> Option<GlyphBitmap> {
        self.map.insert(c, bitmap)
    }

    pub fn get(&self, c: char) -> Option<&GlyphBitmap> {
        self.map.get(&c)
    }

    /// The bitmap for `c`, or the blank bitmap if unknown.
    pub fn bitmap(&self, c: char) -> &GlyphBitmap {
        self.map.get(&c).unwrap_or(&self.blank)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Characters sorted by codepoint.
    pub fn chars(&self) -> Vec<char> {
        let mut chars: Vec<char> = self.map.keys().copied().collect();
        chars.sort_unstable();
        chars
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let chars = self.chars();
        let mut out = Vec::with_capacity(8 + chars.len() * RECORD_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(chars.len() as u32).to_le_bytes());
        for c in chars {
            out.extend_from_slice(&(c as u32).to_le_bytes());
            out.extend_from_slice(&self.map[&c].to_bytes());
        }
        out
    }
}
