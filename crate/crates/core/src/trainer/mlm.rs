use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chardata::{PinyinCode, GLYPH_PIXELS, MASK_ID};
use crate::corpus::{Batch, Example};
use crate::error::{Error, Result};
use crate::macu::MaskedPredictor;
use crate::model::NamBert;
use crate::nn::{Optimizer, OptimizerConfig, Real};

use super::config::{EpochMetrics, TrainReport};
use super::finetune::{epoch_order, step};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(1e-3),
            mask_rate: 0.15,
            seed: 0,
        }
    }
}

/// Mask positions of `batch` in place and return the per-position restore
/// targets (`None` where nothing was masked).
#[allow(clippy::needless_range_loop)]
fn mask_batch(batch: &mut Batch, rate: f64, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
    let mut targets = vec![None; batch.positions()];
    for k in 0..batch.positions() {
        if !batch.mask[k] || !rng.gen_bool(rate) {
            continue;
        }
        targets[k] = Some(batch.ids[k]);
        batch.ids[k] = MASK_ID;
        batch.pinyin[k] = PinyinCode::EMPTY;
        batch.glyphs[k * GLYPH_PIXELS..(k + 1) * GLYPH_PIXELS].fill(0.0);
    }
    targets
}

/// Train `model` (normally semantic-only) to restore randomly masked
/// characters with plain cross-entropy.
pub fn pretrain_mlm<T: Real>(model: &mut NamBert<T>, sentences: &[Vec<char>], cfg: &MlmConfig) -> Result<TrainReport> {
    if sentences.iter().all(|s| s.is_empty()) {
        return Err(Error::Config("masked-LM corpus is empty".into()));
    }
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate <= 1.0) {
        return Err(Error::Config(format!(
            "mask_rate must lie in (0, 1], got {}; nothing would be learned",
            cfg.mask_rate
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let examples: Vec<Example> = sentences
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| Example {
            id: String::new(),
            source: s.clone(),
            target: s.clone(),
        })
        .collect();
    let ones = vec![T::one(); model.config().vocab_size];
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut report = TrainReport::default();
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(examples.len(), cfg.seed, epoch);
        let (mut sum, mut positions, mut clamped, mut epoch_steps) = (0.0, 0, 0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let chunk: Vec<Example> = idx.iter().map(|&i| examples[i].clone()).collect();
            let mut batch = model.batch(&chunk);
            let targets = mask_batch(&mut batch, cfg.mask_rate, &mut rng);
            steps += 1;
            let (s, n, c) = step(model, &mut opt, &batch, steps, |m, g, b| {
                let trace = m.build(g, b)?;
                let loss = g.focal_loss(trace.logits, &targets, &ones, T::zero())?;
                Ok((loss, targets.iter().flatten().count()))
            })?;
            sum += s;
            positions += n;
            clamped += c;
            epoch_steps += 1;
        }
        report.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            mean_loss: if positions > 0 { sum / positions as f64 } else { 0.0 },
            positions,
            steps: epoch_steps,
            clamped,
        });
    }
    Ok(report)
}

/// Fraction of positions restored when each is masked on its own.
pub fn restoration_accuracy<P: MaskedPredictor + ?Sized>(model: &P, sentences: &[Vec<char>]) -> Result<f64> {
    let queries: Vec<(&[char], usize)> = sentences
        .iter()
        .flat_map(|s| (0..s.len()).map(move |p| (s.as_slice(), p)))
        .collect();
    if queries.is_empty() {
        return Ok(0.0);
    }
    let guesses = model.predict_masked(&queries)?;
    let hits = queries.iter().zip(&guesses).filter(|((s, p), g)| s[*p] == **g).count();
    Ok(hits as f64 / queries.len() as f64)
}
