use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model that guesses the character hidden under a MASK.
pub trait MaskedPredictor {
    /// For each `(sentence, position)`, mask that position and return the
    /// predicted character.
    fn predict_masked(&self, queries: &[(&[char], usize)]) -> Result<Vec<char>>;
}

/// Positions the context-only baseline cannot restore.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSet {
    pub sentences: Vec<Vec<char>>,
    /// `(sentence index, position)`, in sentence-then-position order.
    pub positions: Vec<(usize, usize)>,
    /// Total positions probed.
    pub probed: usize,
}

impl FilterSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn original(&self, (s, p): (usize, usize)) -> char {
        self.sentences[s][p]
    }
}

const QUERY_CHUNK: usize = 256;

/// Mask each position of the first `m` sentences one at a time and keep the
/// positions the baseline fails to restore.
pub fn build_filter_set<P: MaskedPredictor + ?Sized>(
    sentences: &[Vec<char>],
    baseline: &P,
    m: usize,
) -> Result<FilterSet> {
    if m > sentences.len() {
        return Err(Error::Input(format!(
            "asked for {m} filter sentences but the corpus has {}",
            sentences.len()
        )));
    }
    let chosen = &sentences[..m];
    let all: Vec<(usize, usize)> = chosen
        .iter()
        .enumerate()
        .flat_map(|(s, chars)| (0..chars.len()).map(move |p| (s, p)))
        .collect();
    let mut positions = Vec::new();
    for chunk in all.chunks(QUERY_CHUNK) {
        let queries: Vec<(&[char], usize)> = chunk.iter().map(|&(s, p)| (chosen[s].as_slice(), p)).collect();
        let guesses = baseline.predict_masked(&queries)?;
        for (&(s, p), g) in chunk.iter().zip(guesses) {
            if g != chosen[s][p] {
                positions.push((s, p));
            }
        }
    }
    Ok(FilterSet {
        sentences: chosen.to_vec(),
        positions,
        probed: all.len(),
    })
}
