use std::path::Path;

use crate::chardata::KEEP_ID;
use crate::error::{Error, Result};

/// A sentence pair of equal, non-zero length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub source: Vec<char>,
    pub target: Vec<char>,
}

impl Example {
    pub fn new(id: impl Into<String>, source: &str, target: &str) -> Result<Self> {
        let source: Vec<char> = source.chars().collect();
        let target: Vec<char> = target.chars().collect();
        if source.is_empty() || source.len() != target.len() {
            return Err(Error::Input(format!(
                "source and target must be non-empty and equally long ({} vs {})",
                source.len(),
                target.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            source,
            target,
        })
    }

    pub fn source_str(&self) -> String {
        self.source.iter().collect()
    }

    pub fn target_str(&self) -> String {
        self.target.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn has_error(&self) -> bool {
        self.source != self.target
    }

    pub fn error_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.source[i] != self.target[i]).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParallelCorpus {
    pub examples: Vec<Example>,
    /// Lines dropped for a missing tab, empty side, or length mismatch.
    pub skipped: usize,
}

/// Read `source<TAB>target` lines.
pub fn parse_parallel(path: impl AsRef<Path>) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_parallel_str(&text, &path.display().to_string()))
}

pub fn parse_parallel_str(text: &str, origin: &str) -> ParallelCorpus {
    let mut corpus = ParallelCorpus::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line
            .split_once('\t')
            .ok_or_else(|| "missing tab".to_string())
            .and_then(|(s, t)| Example::new(format!("{origin}:{}", i + 1), s, t).map_err(|e| e.to_string()));
        match parsed {
            Ok(ex) => corpus.examples.push(ex),
            Err(why) => {
                log::warn!("{origin}:{}: skipped ({why})", i + 1);
                corpus.skipped += 1;
            }
        }
    }
    corpus
}

pub fn write_parallel(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let text: String = examples
        .iter()
        .map(|e| format!("{}\t{}\n", e.source_str(), e.target_str()))
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// KEEP (1) where source and target agree, the target id elsewhere.
pub fn remap_labels(x_ids: &[usize], y_ids: &[usize]) -> Vec<usize> {
    debug_assert_eq!(x_ids.len(), y_ids.len());
    x_ids
        .iter()
        .zip(y_ids)
        .map(|(&x, &y)| if x == y { KEEP_ID } else { y })
        .collect()
}
