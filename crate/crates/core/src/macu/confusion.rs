use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chardata::{GlyphAtlas, PinyinTable};
use crate::error::{Error, Result};
use crate::par;

use super::similarity::{graphemic_features, phonetic_features, unit, unit_similarity};

pub const BIN_COUNT: usize = 20;
pub const BIN_WIDTH: f64 = 0.05;

/// `floor(s / 0.05)` with `s = 1` folded into the last bin. The result is
/// corrected against the exact bounds of [`bin_lower_bounds`] so that a value
/// and its bin never disagree after rounding.
pub fn bin_of(s: f64) -> usize {
    let n = BIN_COUNT as f64;
    let mut i = (s * n).floor().clamp(0.0, n - 1.0) as usize;
    if i > 0 && s < i as f64 / n {
        i -= 1;
    } else if i + 1 < BIN_COUNT && s >= (i + 1) as f64 / n {
        i += 1;
    }
    i
}

/// `true` when `s` lies in `[φ_bin, φ_bin + 0.05)`, or in `[0.95, 1]` for the last bin.
pub fn in_bin(s: f64, bin: usize) -> bool {
    let n = BIN_COUNT as f64;
    let lo = bin as f64 / n;
    let hi = (bin + 1) as f64 / n;
    s >= lo && (s < hi || (bin == BIN_COUNT - 1 && s <= 1.0))
}

/// Lower bound `φ_i` of each bin.
pub fn bin_lower_bounds() -> Vec<f64> {
    (0..BIN_COUNT).map(|i| i as f64 / BIN_COUNT as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfusionKind {
    Phonetic,
    Graphemic,
}

impl fmt::Display for ConfusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfusionKind::Phonetic => "phonetic",
            ConfusionKind::Graphemic => "graphemic",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub a: char,
    pub b: char,
    pub similarity: f64,
    pub bin: usize,
}

impl ConfusionPair {
    pub fn new(a: char, b: char, similarity: f64) -> Self {
        Self {
            a,
            b,
            similarity,
            bin: bin_of(similarity),
        }
    }

    pub fn other(&self, c: char) -> Option<char> {
        if c == self.a {
            Some(self.b)
        } else if c == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Similarity thresholds that decide which pairs count as similar "only" in
/// one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(default = "default_tau")]
    pub phonetic: f64,
    #[serde(default = "default_tau")]
    pub graphemic: f64,
}

fn default_tau() -> f64 {
    0.6
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            phonetic: 0.6,
            graphemic: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSet {
    pub kind: ConfusionKind,
    /// Sorted by similarity, highest first.
    pub pairs: Vec<ConfusionPair>,
}

impl ConfusionSet {
    pub fn from_pairs(kind: ConfusionKind, mut pairs: Vec<ConfusionPair>) -> Result<Self> {
        for p in &pairs {
            if !(0.0..=1.0).contains(&p.similarity) {
                return Err(Error::Input(format!(
                    "pair {}-{} has similarity {} outside [0, 1]",
                    p.a, p.b, p.similarity
                )));
            }
            if p.a == p.b {
                return Err(Error::Input(format!(
                    "pair {}-{} pairs a character with itself",
                    p.a, p.b
                )));
            }
            if p.bin != bin_of(p.similarity) {
                return Err(Error::Input(format!(
                    "pair {}-{} claims bin {} for similarity {}",
                    p.a, p.b, p.bin, p.similarity
                )));
            }
        }
        sort_pairs(&mut pairs);
        Ok(Self { kind, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every character's partners in either direction, most similar first.
    pub fn partner_map(&self) -> HashMap<char, Vec<char>> {
        let mut map: HashMap<char, Vec<char>> = HashMap::new();
        for p in &self.pairs {
            map.entry(p.a).or_default().push(p.b);
            map.entry(p.b).or_default().push(p.a);
        }
        map
    }

    /// Per character, the `(partner, similarity)` entries grouped by bin.
    pub fn bin_index(&self) -> HashMap<char, Vec<Vec<(char, f64)>>> {
        let mut map: HashMap<char, Vec<Vec<(char, f64)>>> = HashMap::new();
        for p in &self.pairs {
            for (x, y) in [(p.a, p.b), (p.b, p.a)] {
                map.entry(x).or_insert_with(|| vec![Vec::new(); BIN_COUNT])[p.bin].push((y, p.similarity));
            }
        }
        map
    }

    /// Pair counts per bin.
    pub fn histogram(&self) -> [usize; BIN_COUNT] {
        let mut h = [0; BIN_COUNT];
        for p in &self.pairs {
            h[p.bin] += 1;
        }
        h
    }

    /// Union of two sets, keeping the first occurrence of a pair.
    pub fn merged(&self, other: &ConfusionSet) -> ConfusionSet {
        let mut seen = std::collections::HashSet::new();
        let mut pairs = Vec::new();
        for p in self.pairs.iter().chain(&other.pairs) {
            let key = if p.a < p.b { (p.a, p.b) } else { (p.b, p.a) };
            if seen.insert(key) {
                pairs.push(p.clone());
            }
        }
        sort_pairs(&mut pairs);
        ConfusionSet { kind: self.kind, pairs }
    }
}

fn sort_pairs(pairs: &mut [ConfusionPair]) {
    pairs.sort_by(|x, y| {
        y.similarity
            .total_cmp(&x.similarity)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
}

/// Score every unordered pair of `chars` on both channels and split them into
/// the phonetic-only set `C_p` (graphemic similarity below `τ_g`) and the
/// graphemic-only set `C_g` (phonetic similarity below `τ_p`).
pub fn build_confusion_sets(
    chars: &[char],
    pinyin: &PinyinTable,
    glyphs: &GlyphAtlas,
    tau: Thresholds,
) -> Result<(ConfusionSet, ConfusionSet)> {
    let mut chars = chars.to_vec();
    chars.sort_unstable();
    chars.dedup();
    let mut feats = Vec::with_capacity(chars.len());
    for &c in &chars {
        let p = pinyin
            .get(c)
            .and_then(|code| unit(&phonetic_features(code)))
            .ok_or_else(|| Error::UndefinedSimilarity(format!("no pinyin for {c}")))?;
        let g = glyphs
            .get(c)
            .and_then(|b| unit(&graphemic_features(b)))
            .ok_or_else(|| Error::UndefinedSimilarity(format!("no glyph (or a blank one) for {c}")))?;
        feats.push((p, g));
    }
    let rows = par::map_range(chars.len(), |i| {
        let mut cp = Vec::new();
        let mut cg = Vec::new();
        for j in i + 1..chars.len() {
            let sp = unit_similarity(&feats[i].0, &feats[j].0);
            let sg = unit_similarity(&feats[i].1, &feats[j].1);
            if sg < tau.graphemic {
                cp.push(ConfusionPair::new(chars[i], chars[j], sp));
            }
            if sp < tau.phonetic {
                cg.push(ConfusionPair::new(chars[i], chars[j], sg));
            }
        }
        (cp, cg)
    });
    let (mut cp, mut cg) = (Vec::new(), Vec::new());
    for (p, g) in rows {
        cp.extend(p);
        cg.extend(g);
    }
    sort_pairs(&mut cp);
    sort_pairs(&mut cg);
    Ok((
        ConfusionSet {
            kind: ConfusionKind::Phonetic,
            pairs: cp,
        },
        ConfusionSet {
            kind: ConfusionKind::Graphemic,
            pairs: cg,
        },
    ))
}

/// Keep only pairs whose similarity reaches `min`.
pub fn top_pairs(set: &ConfusionSet, min: f64) -> ConfusionSet {
    ConfusionSet {
        kind: set.kind,
        pairs: set.pairs.iter().filter(|p| p.similarity >= min).cloned().collect(),
    }
}
