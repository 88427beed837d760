use crate::chardata::{PinyinCode, GLYPH_PIXELS, MASK_ID};
use crate::corpus::Example;
use crate::error::Result;
use crate::model::NamBert;
use crate::nn::Real;

use super::filter::MaskedPredictor;
use super::protocol::Corrector;

const CHUNK: usize = 32;

impl<T: Real> Corrector for NamBert<T> {
    fn correct_batch(&self, sentences: &[Vec<char>]) -> Result<Vec<Vec<char>>> {
        self.correct(sentences)
    }
}

impl<T: Real> MaskedPredictor for NamBert<T> {
    fn predict_masked(&self, queries: &[(&[char], usize)]) -> Result<Vec<char>> {
        let window = self.config().max_seq;
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(CHUNK) {
            let mut examples = Vec::with_capacity(chunk.len());
            let mut local = Vec::with_capacity(chunk.len());
            for &(s, p) in chunk {
                let start = if s.len() <= window {
                    0
                } else {
                    p.saturating_sub(window / 2).min(s.len() - window)
                };
                let end = (start + window).min(s.len());
                examples.push(Example {
                    id: String::new(),
                    source: s[start..end].to_vec(),
                    target: s[start..end].to_vec(),
                });
                local.push(p - start);
            }
            let mut batch = self.batch(&examples);
            let n = batch.seq_len;
            let positions: Vec<(usize, usize)> = local.iter().enumerate().map(|(b, &i)| (b, i)).collect();
            for &(b, i) in &positions {
                let k = b * n + i;
                batch.ids[k] = MASK_ID;
                batch.pinyin[k] = PinyinCode::EMPTY;
                batch.glyphs[k * GLYPH_PIXELS..(k + 1) * GLYPH_PIXELS].fill(0.0);
            }
            out.extend(self.predict_chars(&batch, &positions)?);
        }
        Ok(out)
    }
}
