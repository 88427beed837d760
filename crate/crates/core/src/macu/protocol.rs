use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

use super::confusion::{bin_lower_bounds, ConfusionKind, ConfusionSet, BIN_COUNT};
use super::filter::FilterSet;
use super::score::macu_score;

/// Anything that maps sentences to same-length corrected sentences.
pub trait Corrector {
    fn correct_batch(&self, sentences: &[Vec<char>]) -> Result<Vec<Vec<char>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub index: usize,
    /// Lower bound `φ_i` of the bin.
    pub phi: f64,
    /// Substitutions made (`T_r`).
    pub total: usize,
    /// Substitutions fully restored (`C_r`).
    pub correct: usize,
    /// `C_r / T_r`, absent when nothing was substituted.
    pub accuracy: Option<f64>,
    /// Filter positions whose character had no partner in this bin.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub sentence: usize,
    pub position: usize,
    pub original: char,
    pub substitute: char,
    pub similarity: f64,
    pub bin: usize,
    pub restored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacuReport {
    pub kind: ConfusionKind,
    pub bins: Vec<BinReport>,
    /// Weighted accuracy `Ã` over the bins that received substitutions.
    pub score: f64,
    pub skipped: usize,
    pub substitutions: Vec<Substitution>,
}

impl MacuReport {
    /// `bin,phi,total,correct,accuracy` rows; empty bins leave accuracy blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,phi,total,correct,accuracy\n");
        for b in &self.bins {
            let acc = b.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.2},{},{},{}", b.index, b.phi, b.total, b.correct, acc);
        }
        out
    }
}

/// Substitute each filter position with an in-bin partner, bin by bin, and
/// count how often `model` restores the sentence exactly.
///
/// Bins run independently, each with its own random stream derived from
/// `seed`, so the report does not depend on how bins are scheduled.
pub fn run_macu<C>(model: &C, filter: &FilterSet, set: &ConfusionSet, seed: u64) -> Result<MacuReport>
where
    C: Corrector + Sync + ?Sized,
{
    if filter.is_empty() {
        return Err(Error::Protocol("filter set is empty".into()));
    }
    let index = set.bin_index();
    let phi = bin_lower_bounds();
    let per_bin = par::map_range(BIN_COUNT, |bin| -> Result<(BinReport, Vec<Substitution>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(bin as u64);
        let mut subs = Vec::new();
        let mut inputs = Vec::new();
        let mut skipped = 0;
        for &(s, p) in &filter.positions {
            let original = filter.sentences[s][p];
            let Some(cands) = index.get(&original).map(|bins| &bins[bin]).filter(|c| !c.is_empty()) else {
                skipped += 1;
                continue;
            };
            let (substitute, similarity) = cands[rng.gen_range(0..cands.len())];
            let mut sentence = filter.sentences[s].clone();
            sentence[p] = substitute;
            inputs.push(sentence);
            subs.push(Substitution {
                sentence: s,
                position: p,
                original,
                substitute,
                similarity,
                bin,
                restored: false,
            });
        }
        let outputs = if inputs.is_empty() {
            Vec::new()
        } else {
            model.correct_batch(&inputs)?
        };
        if outputs.len() != inputs.len() {
            return Err(Error::Contract(format!(
                "corrector returned {} sentences for {}",
                outputs.len(),
                inputs.len()
            )));
        }
        let mut correct = 0;
        for (sub, out) in subs.iter_mut().zip(&outputs) {
            sub.restored = *out == filter.sentences[sub.sentence];
            correct += sub.restored as usize;
        }
        let total = subs.len();
        let report = BinReport {
            index: bin,
            phi: phi[bin],
            total,
            correct,
            accuracy: (total > 0).then(|| correct as f64 / total as f64),
            skipped,
        };
        Ok((report, subs))
    });

    let mut bins = Vec::with_capacity(BIN_COUNT);
    let mut substitutions = Vec::new();
    for r in per_bin {
        let (b, s) = r?;
        bins.push(b);
        substitutions.extend(s);
    }
    let filled: Vec<&BinReport> = bins.iter().filter(|b| b.total > 0).collect();
    if filled.is_empty() {
        return Err(Error::Protocol(format!(
            "no filter position has a partner in any bin of the {} confusion set",
            set.kind
        )));
    }
    let acc: Vec<f64> = filled.iter().map(|b| b.accuracy.unwrap_or(0.0)).collect();
    let lower: Vec<f64> = filled.iter().map(|b| b.phi).collect();
    let score = macu_score(&acc, &lower)?;
    Ok(MacuReport {
        kind: set.kind,
        skipped: bins.iter().map(|b| b.skipped).sum(),
        bins,
        score,
        substitutions,
    })
}
