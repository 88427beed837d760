//! Companion glyph generator: rasterize characters from a user-supplied
//! TrueType/OpenType font into 32×32 bitmaps.

use ab_glyph::{point, Font, FontRef, PxScale, ScaleFont};

use crate::error::{Error, Result};

use super::{GlyphAtlas, GlyphBitmap, GLYPH_SIDE};

/// Rasterize every character of `chars` the font covers, centered in the
/// 32×32 cell. Returns the atlas and the characters the font lacks.
pub fn rasterize_font(font_bytes: &[u8], chars: &[char]) -> Result<(GlyphAtlas, Vec<char>)> {
    let font = FontRef::try_from_slice(font_bytes).map_err(|e| Error::Format(format!("unreadable font: {e}")))?;
    let side = GLYPH_SIDE as f32;
    let mut atlas = GlyphAtlas::default();
    let mut missing = Vec::new();
    for &c in chars {
        let id = font.glyph_id(c);
        if id.0 == 0 {
            missing.push(c);
            continue;
        }
        let scaled = font.as_scaled(PxScale::from(side));
        let glyph = id.with_scale_and_position(PxScale::from(side), point(0.0, scaled.ascent()));
        let mut px = vec![0.0f32; GLYPH_SIDE * GLYPH_SIDE];
        if let Some(outline) = font.outline_glyph(glyph) {
            let b = outline.px_bounds();
            let (w, h) = (b.width(), b.height());
            let dx = ((side - w) / 2.0).floor().max(0.0) as i32;
            let dy = ((side - h) / 2.0).floor().max(0.0) as i32;
            outline.draw(|x, y, cov| {
                let (x, y) = (x as i32 + dx, y as i32 + dy);
                if (0..GLYPH_SIDE as i32).contains(&x) && (0..GLYPH_SIDE as i32).contains(&y) {
                    let p = &mut px[y as usize * GLYPH_SIDE + x as usize];
                    *p = p.max(cov.clamp(0.0, 1.0));
                }
            });
        }
        atlas.insert(c, GlyphBitmap::from_pixels(px)?);
    }
    Ok((atlas, missing))
}
