use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chardata::UNK_ID;
use crate::corpus::{Batch, Example};
use crate::error::{Error, Result};
use crate::model::NamBert;
use crate::nn::{Graph, Optimizer, Real};

use super::config::{EpochMetrics, TrainConfig, TrainReport};

/// Shuffled minibatch order for one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One optimizer step on the mean per-position loss of `batch`. Returns the
/// summed loss, the number of scored positions and clamped probabilities.
pub(crate) fn step<T: Real, F>(
    model: &mut NamBert<T>,
    opt: &mut Optimizer<T>,
    batch: &Batch,
    step_no: usize,
    loss_fn: F,
) -> Result<(f64, usize, usize)>
where
    F: Fn(&NamBert<T>, &mut Graph<T>, &Batch) -> Result<(crate::nn::Var, usize)>,
{
    let mut g = Graph::new();
    let (loss, count) = loss_fn(model, &mut g, batch)?;
    let total = g.value(loss).data()[0].f64();
    if !total.is_finite() {
        return Err(Error::Numerical(format!("loss became {total} at step {step_no}")));
    }
    if count == 0 {
        return Ok((0.0, 0, g.clamped_probabilities()));
    }
    let mean = g.scale(loss, T::of(1.0 / count as f64));
    let grads = g.backward(mean)?;
    g.accumulate_param_grads(&grads, model.params_mut());
    opt.step(model.params_mut());
    Ok((total, count, g.clamped_probabilities()))
}

/// Fine-tune the full model with its configured loss. The recorded loss is
/// the epoch mean per scored position.
pub fn train<T: Real>(model: &mut NamBert<T>, examples: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut report = TrainReport::default();
    let mut steps = 0;
    let mut dropout = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout.set_stream(u64::MAX);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(examples.len(), cfg.seed, epoch);
        let (mut sum, mut positions, mut clamped, mut epoch_steps) = (0.0, 0, 0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let chunk: Vec<Example> = idx.iter().map(|&i| examples[i].clone()).collect();
            let mut batch = model.batch(&chunk);
            if cfg.unk_rate > 0.0 {
                for (id, &live) in batch.ids.iter_mut().zip(&batch.mask) {
                    if live && dropout.gen_bool(cfg.unk_rate) {
                        *id = UNK_ID;
                    }
                }
            }
            steps += 1;
            let (s, n, c) = step(model, &mut opt, &batch, steps, |m, g, b| m.loss(g, b))?;
            sum += s;
            positions += n;
            clamped += c;
            epoch_steps += 1;
        }
        let mean_loss = if positions > 0 { sum / positions as f64 } else { 0.0 };
        log::info!("epoch {} mean loss {mean_loss:.6}", epoch + 1);
        report.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            mean_loss,
            positions,
            steps: epoch_steps,
            clamped,
        });
        if cfg.target_loss.is_some_and(|t| mean_loss < t) {
            break;
        }
    }
    Ok(report)
}
