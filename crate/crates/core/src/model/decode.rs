use crate::chardata::{Vocab, FIRST_CHAR_ID};
use crate::nn::{Real, Tensor};

/// Greedy decoding of `[B, n, m]` probabilities. A reserved id (keep, pad,
/// unknown, mask) at the argmax leaves the source character in place; any
/// other id is replaced by its character. Output lengths equal source lengths.
pub fn decode<T: Real>(probs: &Tensor<T>, sources: &[Vec<char>], vocab: &Vocab) -> Vec<Vec<char>> {
    let shape = probs.shape();
    let (n, m) = (shape[1], shape[2]);
    let best = probs.argmax_rows();
    sources
        .iter()
        .enumerate()
        .map(|(b, src)| {
            src.iter()
                .enumerate()
                .map(|(i, &c)| {
                    if i >= n {
                        return c;
                    }
                    let id = best[b * n + i];
                    debug_assert!(id < m);
                    if id < FIRST_CHAR_ID {
                        c
                    } else {
                        vocab.char_of(id).unwrap_or(c)
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chardata::{KEEP_ID, UNK_ID};

    fn one_hot(ids: &[usize], m: usize) -> Tensor<f64> {
        let mut data = vec![0.0; ids.len() * m];
        for (r, &id) in ids.iter().enumerate() {
            data[r * m + id] = 1.0;
        }
        Tensor::from_vec(&[1, ids.len(), m], data).unwrap()
    }

    #[test]
    fn keep_and_reserved_ids_copy_source() {
        let vocab = Vocab::from_chars(['甲', '乙']).unwrap();
        let probs = one_hot(&[KEEP_ID, 5, UNK_ID], vocab.len());
        let src = vec!['丙', '丁', '戊'];
        assert_eq!(decode(&probs, &[src], &vocab), vec![vec!['丙', '乙', '戊']]);
    }
}
