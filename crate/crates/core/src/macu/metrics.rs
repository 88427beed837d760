use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored sentence. A `None` prediction is an unusable answer (for
/// instance one of the wrong length): it counts as flagged and wrong.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceOutcome {
    pub source: Vec<char>,
    pub target: Vec<char>,
    pub prediction: Option<Vec<char>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CscMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sentences: usize,
    /// Sentences the system changed.
    pub flagged: usize,
    /// Changed sentences that now equal an erroneous source's target.
    pub true_positive: usize,
    /// Sentences whose source differs from the target.
    pub erroneous: usize,
}

impl CscMetrics {
    pub fn from_outcomes(outcomes: &[SentenceOutcome]) -> Self {
        let mut m = CscMetrics {
            sentences: outcomes.len(),
            ..Default::default()
        };
        for o in outcomes {
            let erroneous = o.source != o.target;
            m.erroneous += erroneous as usize;
            match &o.prediction {
                None => m.flagged += 1,
                Some(p) => {
                    if *p != o.source {
                        m.flagged += 1;
                        if erroneous && *p == o.target {
                            m.true_positive += 1;
                        }
                    }
                }
            }
        }
        m.precision = ratio(m.true_positive, m.flagged);
        m.recall = ratio(m.true_positive, m.erroneous);
        m.f1 = if m.precision + m.recall > 0.0 {
            2.0 * m.precision * m.recall / (m.precision + m.recall)
        } else {
            0.0
        };
        m
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Sentence-level precision, recall and F1 over aligned triples.
pub fn sentence_metrics(sources: &[Vec<char>], predictions: &[Vec<char>], targets: &[Vec<char>]) -> Result<CscMetrics> {
    if sources.len() != predictions.len() || sources.len() != targets.len() {
        return Err(Error::Input(format!(
            "{} sources, {} predictions, {} targets",
            sources.len(),
            predictions.len(),
            targets.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(sources.len());
    for (i, ((s, p), t)) in sources.iter().zip(predictions).zip(targets).enumerate() {
        if s.len() != p.len() || s.len() != t.len() {
            return Err(Error::Input(format!(
                "sentence {i}: lengths {} / {} / {} differ",
                s.len(),
                p.len(),
                t.len()
            )));
        }
        outcomes.push(SentenceOutcome {
            source: s.clone(),
            target: t.clone(),
            prediction: Some(p.clone()),
        });
    }
    Ok(CscMetrics::from_outcomes(&outcomes))
}
