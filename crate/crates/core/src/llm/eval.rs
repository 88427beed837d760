use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::macu::{CscMetrics, SentenceOutcome};

use super::client::{chat_with_retries, clean_response, ChatBackend, Failure, FailureKind};
use super::prompt::PromptTemplate;

/// One request/response exchange, as persisted in the JSON-lines log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRecord {
    pub index: usize,
    pub id: String,
    pub source: String,
    pub target: String,
    pub prompt: String,
    /// Raw reply text, when one arrived.
    pub response: Option<String>,
    /// Cleaned reply of the right length.
    pub prediction: Option<String>,
    pub failure: Option<Failure>,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmEvaluation {
    pub metrics: CscMetrics,
    pub transport_failures: usize,
    pub length_mismatches: usize,
    #[serde(skip)]
    pub records: Vec<LlmRecord>,
}

#[derive(Clone, Copy, Debug)]
pub struct LlmRunOptions {
    pub concurrency: usize,
    pub retries: u32,
    pub backoff_ms: u64,
}

/// Turn one reply into a record.
pub fn judge(
    index: usize,
    ex: &Example,
    prompt: String,
    reply: std::result::Result<String, Failure>,
    attempts: u32,
) -> LlmRecord {
    let mut rec = LlmRecord {
        index,
        id: ex.id.clone(),
        source: ex.source_str(),
        target: ex.target_str(),
        prompt,
        response: None,
        prediction: None,
        failure: None,
        attempts,
    };
    match reply {
        Ok(raw) => {
            let cleaned = clean_response(&raw);
            let len = cleaned.chars().count();
            if len == ex.len() {
                rec.prediction = Some(cleaned);
            } else {
                rec.failure = Some(Failure {
                    kind: FailureKind::LengthMismatch,
                    message: format!("reply has {len} characters, source has {}", ex.len()),
                });
            }
            rec.response = Some(raw);
        }
        Err(f) => rec.failure = Some(f),
    }
    rec
}

/// Score records through the shared sentence-level metrics. Length
/// mismatches count as flagged and wrong; requests that got no answer count
/// as an unchanged sentence.
pub fn score_records(mut records: Vec<LlmRecord>) -> Result<LlmEvaluation> {
    records.sort_by_key(|r| r.index);
    let mut transport_failures = 0;
    let mut length_mismatches = 0;
    let outcomes: Vec<SentenceOutcome> = records
        .iter()
        .map(|r| {
            let source: Vec<char> = r.source.chars().collect();
            let prediction = match (&r.prediction, r.failure.as_ref().map(|f| f.kind)) {
                (Some(p), _) => Some(p.chars().collect()),
                (None, Some(FailureKind::LengthMismatch)) => {
                    length_mismatches += 1;
                    None
                }
                _ => {
                    transport_failures += 1;
                    Some(source.clone())
                }
            };
            SentenceOutcome {
                source,
                target: r.target.chars().collect(),
                prediction,
            }
        })
        .collect();
    if transport_failures * 2 > records.len() {
        let first = records
            .iter()
            .find_map(|r| r.failure.as_ref().filter(|f| f.kind.is_transport()))
            .map(|f| f.message.clone())
            .unwrap_or_default();
        return Err(Error::Protocol(format!(
            "{transport_failures} of {} requests got no answer (first: {first})",
            records.len()
        )));
    }
    Ok(LlmEvaluation {
        metrics: CscMetrics::from_outcomes(&outcomes),
        transport_failures,
        length_mismatches,
        records,
    })
}

/// Ask `backend` to correct every example with bounded concurrency, append
/// each exchange to `log` as it completes, then score.
pub fn evaluate_llm<B: ChatBackend + ?Sized>(
    examples: &[Example],
    backend: &B,
    template: &PromptTemplate,
    opts: LlmRunOptions,
    log: Option<&Path>,
) -> Result<LlmEvaluation> {
    let prompts = examples
        .iter()
        .map(|e| template.build_prompt(&e.source_str()))
        .collect::<Result<Vec<_>>>()?;
    let mut writer = match log {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))
        }
        None => None,
    };
    let next = AtomicUsize::new(0);
    let workers = opts.concurrency.max(1).min(examples.len().max(1));
    let (tx, rx) = mpsc::channel::<LlmRecord>();
    let mut records = Vec::with_capacity(examples.len());
    let mut write_err = None;
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, prompts) = (&next, &prompts);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= examples.len() {
                    break;
                }
                let (reply, attempts) = chat_with_retries(backend, &prompts[i], opts.retries, opts.backoff_ms);
                if tx
                    .send(judge(i, &examples[i], prompts[i].clone(), reply, attempts))
                    .is_err()
                {
                    break;
                }
            });
        }
        drop(tx);
        for rec in rx {
            if let (Some(w), None) = (writer.as_mut(), &write_err) {
                let line = serde_json::to_string(&rec).expect("record serializes");
                if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                    write_err = Some(e);
                }
            }
            records.push(rec);
        }
    });
    if let (Some(e), Some(p)) = (write_err, log) {
        return Err(Error::io(p, e));
    }
    score_records(records)
}

/// Re-score a persisted log without contacting any endpoint.
pub fn replay(log: impl AsRef<Path>) -> Result<LlmEvaluation> {
    let path = log.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect::<Result<Vec<LlmRecord>>>()?;
    score_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl ChatBackend for Echo {
        fn chat_once(&self, prompt: &str) -> std::result::Result<String, (Failure, bool)> {
            Ok(prompt.lines().last().unwrap_or_default().to_string())
        }
    }

    #[test]
    fn zero_sentences_give_zero_metrics() {
        let ev = evaluate_llm(&[], &Echo, &PromptTemplate::default(), opts(), None).unwrap();
        assert_eq!(ev.metrics, CscMetrics::default());
    }

    fn opts() -> LlmRunOptions {
        LlmRunOptions {
            concurrency: 3,
            retries: 0,
            backoff_ms: 1,
        }
    }

    #[test]
    fn echo_is_never_flagged_and_replay_matches() {
        let ex: Vec<Example> = (0..7)
            .map(|i| Example::new(format!("e{i}"), "我受中国", "我爱中国").unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log.jsonl");
        let live = evaluate_llm(&ex, &Echo, &PromptTemplate::default(), opts(), Some(&log)).unwrap();
        assert_eq!(live.metrics.flagged, 0);
        assert_eq!(live.metrics.erroneous, 7);
        let again = replay(&log).unwrap();
        assert_eq!(again.metrics, live.metrics);
        assert_eq!(again.records, live.records);
    }
}
