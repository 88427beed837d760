use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::Result;
use crate::macu::{CscMetrics, SentenceOutcome};
use crate::model::NamBert;
use crate::nn::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: CscMetrics,
    /// Sentences left out because a target character is outside the vocabulary.
    pub excluded_oov: usize,
    pub predictions: Vec<String>,
}

/// Correct every source and score the sentences whose targets the model can
/// express at all.
pub fn evaluate<T: Real>(model: &NamBert<T>, examples: &[Example]) -> Result<Evaluation> {
    let sources: Vec<Vec<char>> = examples.iter().map(|e| e.source.clone()).collect();
    let predictions = model.correct(&sources)?;
    let mut outcomes = Vec::with_capacity(examples.len());
    let mut excluded_oov = 0;
    for (e, p) in examples.iter().zip(&predictions) {
        let expressible = e
            .source
            .iter()
            .zip(&e.target)
            .all(|(s, t)| s == t || model.vocab().contains(*t));
        if !expressible {
            excluded_oov += 1;
            continue;
        }
        outcomes.push(SentenceOutcome {
            source: e.source.clone(),
            target: e.target.clone(),
            prediction: Some(p.clone()),
        });
    }
    Ok(Evaluation {
        metrics: CscMetrics::from_outcomes(&outcomes),
        excluded_oov,
        predictions: predictions.into_iter().map(|p| p.into_iter().collect()).collect(),
    })
}
