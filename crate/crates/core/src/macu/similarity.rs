use crate::chardata::{GlyphBitmap, PinyinCode, PINYIN_LEN};
use crate::error::{Error, Result};

/// Alphabet per pinyin slot: padding plus a..z.
const SLOT_CLASSES: usize = 27;
pub const PHONETIC_FEATURE_DIM: usize = PINYIN_LEN * SLOT_CLASSES;

/// `(1 + cos(f_x, f_y)) / 2`, clamped into `[0, 1]` against rounding.
pub fn char_similarity(fx: &[f64], fy: &[f64]) -> Result<f64> {
    if fx.len() != fy.len() {
        return Err(Error::Dimension(format!(
            "similarity of {}-dim and {}-dim features",
            fx.len(),
            fy.len()
        )));
    }
    let (nx, ny) = (norm(fx), norm(fy));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::UndefinedSimilarity("zero feature vector".into()));
    }
    let dot: f64 = fx.iter().zip(fy).map(|(a, b)| a * b).sum();
    Ok(((1.0 + dot / (nx * ny)) / 2.0).clamp(0.0, 1.0))
}

/// Similarity of two vectors already scaled to unit length.
pub(crate) fn unit_similarity(ux: &[f64], uy: &[f64]) -> f64 {
    let dot: f64 = ux.iter().zip(uy).map(|(a, b)| a * b).sum();
    ((1.0 + dot) / 2.0).clamp(0.0, 1.0)
}

pub(crate) fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Six 27-way one-hot slots of a pinyin code.
pub fn phonetic_features(code: PinyinCode) -> Vec<f64> {
    let mut f = vec![0.0; PHONETIC_FEATURE_DIM];
    for (slot, &v) in code.codes().iter().enumerate() {
        f[slot * SLOT_CLASSES + v as usize] = 1.0;
    }
    f
}

pub fn graphemic_features(glyph: &GlyphBitmap) -> Vec<f64> {
    glyph.pixels().iter().map(|&p| p as f64).collect()
}
