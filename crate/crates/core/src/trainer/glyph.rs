use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chardata::{GlyphAtlas, GLYPH_PIXELS};
use crate::error::{Error, Result};
use crate::model::{graphemic_forward, ModelConfig};
use crate::nn::{Graph, Linear, Optimizer, OptimizerConfig, ParamStore, Real, Tensor};

use super::config::{EpochMetrics, TrainReport};
use super::finetune::epoch_order;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlyphPretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Probability that each pixel is inverted in a training sample.
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for GlyphPretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(1e-3),
            flip_prob: 0.05,
            seed: 0,
        }
    }
}

/// A trained graphemic encoder, detached from its identification head.
#[derive(Clone, Debug)]
pub struct GlyphEncoder<T> {
    pub params: ParamStore<T>,
    /// Identification accuracy on clean bitmaps at the end of training.
    pub accuracy: f64,
    pub report: TrainReport,
}

struct Net {
    layers: [Linear; 3],
    head: Linear,
}

fn build_net<T: Real>(cfg: &ModelConfig, classes: usize, seed: u64) -> Result<(ParamStore<T>, Net)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let [h1, h2] = cfg.glyph_hidden;
    let layers = [
        Linear::new(&mut store, "graphemic.fc1", GLYPH_PIXELS, h1, true, &mut rng)?,
        Linear::new(&mut store, "graphemic.fc2", h1, h2, true, &mut rng)?,
        Linear::new(&mut store, "graphemic.fc3", h2, cfg.d_graphemic, true, &mut rng)?,
    ];
    let head = Linear::new(&mut store, "glyph_classifier", cfg.d_graphemic, classes, true, &mut rng)?;
    Ok((store, Net { layers, head }))
}

/// Bitmaps of the given atlas rows, each pixel inverted with probability `flip`.
fn inputs<T: Real>(rows: &[&[f32]], flip: f64, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(rows.len() * GLYPH_PIXELS);
    for row in rows {
        for &p in row.iter() {
            let v = if flip > 0.0 && rng.gen_bool(flip) { 1.0 - p } else { p };
            data.push(T::of(v as f64));
        }
    }
    Tensor::from_vec(&[rows.len(), GLYPH_PIXELS], data)
}

/// Train the graphemic encoder, with a temporary linear head, to tell every
/// glyph in `atlas` apart under random pixel-flip noise.
pub fn pretrain_glyph<T: Real>(
    atlas: &GlyphAtlas,
    model_cfg: &ModelConfig,
    cfg: &GlyphPretrainConfig,
) -> Result<GlyphEncoder<T>> {
    let chars = atlas.chars();
    if chars.len() < 2 {
        return Err(Error::Config(format!(
            "glyph pretraining needs at least 2 characters, atlas has {}",
            chars.len()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.flip_prob) {
        return Err(Error::Config(format!("flip_prob {} outside [0, 1]", cfg.flip_prob)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let bitmaps: Vec<&[f32]> = chars.iter().map(|&c| atlas.bitmap(c).pixels()).collect();
    let (mut store, net) = build_net::<T>(model_cfg, chars.len(), cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let ones = vec![T::one(); chars.len()];
    let mut report = TrainReport::default();
    let mut steps = 0;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(chars.len(), cfg.seed, epoch);
        let (mut sum, mut clamped, mut epoch_steps) = (0.0, 0, 0);
        for idx in order.chunks(cfg.batch_size) {
            steps += 1;
            let rows: Vec<&[f32]> = idx.iter().map(|&i| bitmaps[i]).collect();
            let x = inputs::<T>(&rows, cfg.flip_prob, &mut noise)?;
            let targets: Vec<Option<usize>> = idx.iter().map(|&i| Some(i)).collect();
            let mut g = Graph::new();
            let x = g.constant(x);
            let h = graphemic_forward(&net.layers, &mut g, &store, x)?;
            let logits = net.head.forward(&mut g, &store, h)?;
            let loss = g.focal_loss(logits, &targets, &ones, T::zero())?;
            let total = g.value(loss).data()[0].f64();
            if !total.is_finite() {
                return Err(Error::Numerical(format!(
                    "glyph pretraining loss became {total} at step {steps}"
                )));
            }
            let mean = g.scale(loss, T::of(1.0 / idx.len() as f64));
            let grads = g.backward(mean)?;
            g.accumulate_param_grads(&grads, &mut store);
            opt.step(&mut store);
            sum += total;
            clamped += g.clamped_probabilities();
            epoch_steps += 1;
        }
        report.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            mean_loss: sum / chars.len() as f64,
            positions: chars.len(),
            steps: epoch_steps,
            clamped,
        });
    }

    let accuracy = {
        let mut g = Graph::new();
        let x = g.constant(inputs::<T>(&bitmaps, 0.0, &mut noise)?);
        let h = graphemic_forward(&net.layers, &mut g, &store, x)?;
        let logits = net.head.forward(&mut g, &store, h)?;
        let pred = g.value(logits).argmax_rows();
        pred.iter().enumerate().filter(|(i, &p)| *i == p).count() as f64 / chars.len() as f64
    };

    let mut params = ParamStore::new();
    for (name, t) in store.iter() {
        if name.starts_with("graphemic.") {
            params.insert(name, t.clone())?;
        }
    }
    Ok(GlyphEncoder {
        params,
        accuracy,
        report,
    })
}

/// The encoder weights a zero-epoch run would return.
pub fn initial_glyph_encoder<T: Real>(model_cfg: &ModelConfig, classes: usize, seed: u64) -> Result<ParamStore<T>> {
    let (store, _) = build_net::<T>(model_cfg, classes, seed)?;
    let mut params = ParamStore::new();
    for (name, t) in store.iter() {
        if name.starts_with("graphemic.") {
            params.insert(name, t.clone())?;
        }
    }
    Ok(params)
}
