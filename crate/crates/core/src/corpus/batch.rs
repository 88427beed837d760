use crate::chardata::{GlyphAtlas, PinyinCode, PinyinTable, Vocab, GLYPH_PIXELS, KEEP_ID, PAD_ID, UNK_ID};
use crate::par;

use super::Example;

/// Padded model input. All per-position arrays are `[batch_size, seq_len]`
/// row-major (with a trailing feature axis for pinyin and glyphs).
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub ids: Vec<usize>,
    pub pinyin: Vec<PinyinCode>,
    /// `[batch_size, seq_len, 1024]` glyph intensities.
    pub glyphs: Vec<f32>,
    /// Remapped labels: KEEP, a target id, or UNK for out-of-vocabulary targets.
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    /// Set when a target character is outside the vocabulary.
    pub uncorrectable: Vec<bool>,
    pub sources: Vec<Vec<char>>,
    pub targets: Vec<Vec<char>>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.batch_size == 0
    }

    pub fn positions(&self) -> usize {
        self.batch_size * self.seq_len
    }

    /// Loss target per position: the label at real positions whose target is
    /// in the vocabulary, `None` elsewhere.
    pub fn loss_targets(&self) -> Vec<Option<usize>> {
        self.labels
            .iter()
            .zip(&self.mask)
            .map(|(&l, &m)| (m && l != UNK_ID).then_some(l))
            .collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.sources.iter().map(Vec::len).collect()
    }
}

/// Truncate to `max_seq`, pad with PAD, and align ids, pinyin codes and glyphs
/// per position. Labels compare characters, so two different out-of-vocabulary
/// characters never collapse into KEEP.
pub fn make_batch(
    examples: &[Example],
    vocab: &Vocab,
    pinyin: &PinyinTable,
    glyphs: &GlyphAtlas,
    max_seq: usize,
) -> Batch {
    let b = examples.len();
    let n = examples.iter().map(|e| e.len().min(max_seq)).max().unwrap_or(0);
    let rows = par::map(examples, |ex| {
        let len = ex.len().min(max_seq);
        let mut ids = vec![PAD_ID; n];
        let mut codes = vec![PinyinCode::EMPTY; n];
        let mut px = vec![0.0f32; n * GLYPH_PIXELS];
        let mut labels = vec![PAD_ID; n];
        let mut mask = vec![false; n];
        let mut uncorrectable = false;
        for i in 0..len {
            let (x, y) = (ex.source[i], ex.target[i]);
            ids[i] = vocab.id_or_unk(x);
            codes[i] = pinyin.get(x).unwrap_or(PinyinCode::EMPTY);
            px[i * GLYPH_PIXELS..(i + 1) * GLYPH_PIXELS].copy_from_slice(glyphs.bitmap(x).pixels());
            mask[i] = true;
            labels[i] = if x == y {
                KEEP_ID
            } else {
                vocab.id(y).unwrap_or_else(|| {
                    uncorrectable = true;
                    UNK_ID
                })
            };
        }
        (ids, codes, px, labels, mask, uncorrectable)
    });

    let mut batch = Batch {
        batch_size: b,
        seq_len: n,
        ..Batch::default()
    };
    for (ex, (ids, codes, px, labels, mask, unc)) in examples.iter().zip(rows) {
        let len = ex.len().min(max_seq);
        batch.ids.extend(ids);
        batch.pinyin.extend(codes);
        batch.glyphs.extend(px);
        batch.labels.extend(labels);
        batch.mask.extend(mask);
        batch.uncorrectable.push(unc);
        batch.sources.push(ex.source[..len].to_vec());
        batch.targets.push(ex.target[..len].to_vec());
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chardata::{build_vocab, GlyphBitmap};

    fn resources() -> (Vocab, PinyinTable, GlyphAtlas) {
        let vocab = build_vocab(&["我爱中国人民"]);
        let pinyin = PinyinTable::from_entries([('我', PinyinCode::from_reading("wo").unwrap())]);
        let mut atlas = GlyphAtlas::default();
        atlas.insert('爱', GlyphBitmap::from_bytes(&[255; GLYPH_PIXELS]).unwrap());
        (vocab, pinyin, atlas)
    }

    #[test]
    fn masks_follow_lengths() {
        let (v, p, g) = resources();
        let ex = [
            Example::new("a", "我爱中", "我爱中").unwrap(),
            Example::new("b", "我爱中国人", "我爱中国人").unwrap(),
        ];
        let batch = make_batch(&ex, &v, &p, &g, 8);
        assert_eq!(batch.seq_len, 5);
        assert_eq!(&batch.mask[..5], &[true, true, true, false, false]);
        assert_eq!(&batch.mask[5..], &[true; 5]);
        assert_eq!(batch.ids[3], PAD_ID);
    }

    #[test]
    fn oov_target_is_unk_and_flagged() {
        let (v, p, g) = resources();
        let ex = [Example::new("a", "我爱中", "我爱钟").unwrap()];
        let batch = make_batch(&ex, &v, &p, &g, 8);
        assert_eq!(batch.labels, vec![KEEP_ID, KEEP_ID, UNK_ID]);
        assert!(batch.uncorrectable[0]);
        assert_eq!(batch.loss_targets()[2], None);
    }

    #[test]
    fn empty_input_is_empty_batch() {
        let (v, p, g) = resources();
        let batch = make_batch(&[], &v, &p, &g, 8);
        assert!(batch.is_empty());
        assert_eq!(batch.positions(), 0);
    }

    #[test]
    fn features_stay_aligned_and_truncate() {
        let (v, p, g) = resources();
        let ex = [Example::new("a", "中我爱", "中我爱").unwrap()];
        let batch = make_batch(&ex, &v, &p, &g, 2);
        assert_eq!(batch.seq_len, 2);
        assert_eq!(batch.ids, vec![v.id('中').unwrap(), v.id('我').unwrap()]);
        assert_eq!(batch.pinyin[1].reading(), "wo");
        assert!(batch.pinyin[0].is_empty());
        assert!(batch.glyphs[..GLYPH_PIXELS].iter().all(|&x| x == 0.0));
        assert_eq!(batch.sources[0], vec!['中', '我']);
    }
}
