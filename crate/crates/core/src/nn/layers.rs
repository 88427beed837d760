use rand::Rng;

use crate::error::{Error, Result};

use super::{init, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.insert(format!("{name}.weight"), init::xavier(rng, d_in, d_out))?;
        let bias = if bias {
            Some(store.insert(format!("{name}.bias"), Tensor::zeros(&[d_out]))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::full(&[d], T::one()))?,
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[d]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, true, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, true, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, true, rng)?,
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, true, rng)?,
            heads,
            d_model,
        })
    }

    /// Self-attention over `x[B, n, d]`; `mask[B·n]` marks real (non-padding)
    /// positions. Returns the projected output and the attention probabilities
    /// `[B, heads, n, n]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.d_model {
            return Err(Error::Dimension(format!(
                "attention expects [B, n, {}], got {s:?}",
                self.d_model
            )));
        }
        let (b, n, d) = (s[0], s[1], s[2]);
        let (h, dh) = (self.heads, d / self.heads);
        let split = |g: &mut Graph<T>, v: Var| -> Result<Var> {
            let v = g.reshape(v, &[b, n, h, dh])?;
            g.swap_axes12(v)
        };
        let q = self.query.forward(g, store, x)?;
        let q = split(g, q)?;
        let k = self.key.forward(g, store, x)?;
        let k = split(g, k)?;
        let v = self.value.forward(g, store, x)?;
        let v = split(g, v)?;

        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, T::of(1.0 / (dh as f64).sqrt()));
        let probs = g.masked_softmax(scores, Some(mask), h * n)?;
        let ctx = g.bmm(probs, v, false)?;
        let ctx = g.swap_axes12(ctx)?;
        let ctx = g.reshape(ctx, &[b, n, d])?;
        let out = self.output.forward(g, store, ctx)?;
        Ok((out, probs))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        d_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_model, d_hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), d_hidden, d_model, true, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, store, h)
    }
}

/// Pre-norm encoder block:
/// `x + Attn(LN(x))`, then `x + FFN(LN(x))` with a GELU feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ffn: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model)?,
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), d_model, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d_model, d_ffn, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mask: &[bool]) -> Result<Var> {
        Ok(self.forward_with_attention(g, store, x, mask)?.0)
    }

    pub fn forward_with_attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let h = self.ln1.forward(g, store, x)?;
        let (attn, probs) = self.attention.forward(g, store, h, mask)?;
        let x = g.add(x, attn)?;
        let h = self.ln2.forward(g, store, x)?;
        let f = self.ffn.forward(g, store, h)?;
        Ok((g.add(x, f)?, probs))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};

    fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        init::uniform(rng, shape, 1.0)
    }

    #[test]
    fn indivisible_heads_is_config_error() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = TransformerBlock::new(&mut store, "b", 10, 3, 16, &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn zeroed_output_projections_make_block_the_identity() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 16, &mut rng).unwrap();
        for name in ["b.attention.output.weight", "b.ffn.fc2.weight"] {
            let shape = store.get(name).unwrap().shape().to_vec();
            store.set(name, Tensor::zeros(&shape)).unwrap();
        }
        let mut g = Graph::new();
        let x_val = random_input(&mut rng, &[1, 1, 8]);
        let x = g.constant(x_val.clone());
        let y = block.forward(&mut g, &store, x, &[true]).unwrap();
        assert_eq!(g.value(y), &x_val);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 16, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(random_input(&mut rng, &[1, 2, 8]));
        let (_, probs) = block.forward_with_attention(&mut g, &store, x, &[true, true]).unwrap();
        assert_eq!(g.shape(probs), &[1, 2, 2, 2]);
        for row in g.value(probs).data().chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn padding_does_not_leak_into_real_positions() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 16, &mut rng).unwrap();
        let base = random_input(&mut rng, &[1, 3, 8]);
        let mut other = base.clone();
        other.data_mut()[16..].iter_mut().for_each(|v| *v += 5.0);
        let run = |x_val: Tensor<f64>| {
            let mut g = Graph::new();
            let x = g.constant(x_val);
            let y = block.forward(&mut g, &store, x, &[true, true, false]).unwrap();
            g.value(y).data()[..16].to_vec()
        };
        assert_eq!(run(base), run(other));
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let block = TransformerBlock::new(&mut store, "b", 8, 2, 16, &mut rng).unwrap();
            let x_val = random_input(&mut rng, &[1, 3, 8]);
            let w = random_input(&mut rng, &[1, 3, 8]);
            let report = grad_check(&mut store, &GradCheckConfig::default(), |g, s| {
                let x = g.constant(x_val.clone());
                let y = block.forward(g, s, x, &[true, true, true])?;
                g.weighted_sum(y, w.clone())
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lin = Linear::new(&mut store, "l", 5, 4, true, &mut rng).unwrap();
            let x_val = random_input(&mut rng, &[3, 5]);
            let report = grad_check(&mut store, &GradCheckConfig::default(), |g, s| {
                let x = g.constant(x_val.clone());
                let y = lin.forward(g, s, x)?;
                Ok(g.sum(y))
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }
}
