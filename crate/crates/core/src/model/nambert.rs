use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chardata::{
    GlyphAtlas, GlyphBitmap, PinyinCode, PinyinTable, Vocab, FIRST_CHAR_ID, GLYPH_PIXELS, PINYIN_LEN,
};
use crate::corpus::{make_batch, Batch, Example};
use crate::error::{Error, Result};
use crate::nn::{init, Graph, LayerNorm, Linear, ParamId, ParamStore, Real, Tensor, TransformerBlock, Var};

use super::checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, GLYPH_ENCODER_KIND, MODEL_KIND};
use super::{decode, Fusion, ModelConfig};

const EMBEDDING_INIT: f64 = 0.1;
const INFERENCE_BATCH: usize = 32;

#[derive(Clone, Debug)]
struct Layout {
    word_embeddings: ParamId,
    position_embeddings: ParamId,
    blocks: Vec<TransformerBlock>,
    final_ln: LayerNorm,
    forget_gate: Linear,
    phonetic: Linear,
    graphemic: [Linear; 3],
    fusion: Option<Linear>,
    align: Option<(Linear, Linear)>,
    output: Linear,
}

impl Layout {
    fn build<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, ds) = (cfg.vocab_size, cfg.d_semantic);
        let word_embeddings = store.insert(
            "semantic.word_embeddings",
            init::uniform(&mut rng, &[m, ds], EMBEDDING_INIT),
        )?;
        let position_embeddings = store.insert(
            "semantic.position_embeddings",
            init::uniform(&mut rng, &[cfg.max_seq, ds], EMBEDDING_INIT),
        )?;
        let blocks = (0..cfg.layers)
            .map(|i| TransformerBlock::new(store, &format!("semantic.layer{i}"), ds, cfg.heads, cfg.d_ffn, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let final_ln = LayerNorm::new(store, "semantic.final_ln", ds)?;
        let forget_gate = Linear::new(store, "semantic.forget_gate", ds, ds, true, &mut rng)?;
        let phonetic = Linear::new(store, "phonetic", PINYIN_LEN, cfg.d_phonetic, true, &mut rng)?;
        let [h1, h2] = cfg.glyph_hidden;
        let graphemic = [
            Linear::new(store, "graphemic.fc1", GLYPH_PIXELS, h1, true, &mut rng)?,
            Linear::new(store, "graphemic.fc2", h1, h2, true, &mut rng)?,
            Linear::new(store, "graphemic.fc3", h2, cfg.d_graphemic, true, &mut rng)?,
        ];
        let (fusion, align) = match cfg.fusion {
            Fusion::Posterior | Fusion::Front => (
                Some(Linear::new(
                    store,
                    "fusion",
                    cfg.fusion_input_width(),
                    ds,
                    true,
                    &mut rng,
                )?),
                None,
            ),
            Fusion::Align => (
                None,
                Some((
                    Linear::new(store, "fusion.phonetic", cfg.d_phonetic, ds, true, &mut rng)?,
                    Linear::new(store, "fusion.graphemic", cfg.d_graphemic, ds, true, &mut rng)?,
                )),
            ),
        };
        let output = Linear::new(store, "output", ds, m, true, &mut rng)?;
        Ok(Self {
            word_embeddings,
            position_embeddings,
            blocks,
            final_ln,
            forget_gate,
            phonetic,
            graphemic,
            fusion,
            align,
            output,
        })
    }
}

/// Intermediate nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Trace {
    /// Raw word embeddings `E`.
    pub embeddings: Var,
    /// What the transformer stack consumed (before positional embeddings).
    pub transformer_input: Var,
    /// `E' = σ(E·W_f + b_f) ⊙ E`.
    pub gated_embeddings: Var,
    /// `H^(s) = E' + H`.
    pub semantic: Var,
    pub phonetic: Var,
    pub graphemic: Var,
    /// Fused per-position feature fed to the output head.
    pub fused: Var,
    pub logits: Var,
}

struct SemanticOut {
    embeddings: Var,
    transformer_input: Var,
    gated: Var,
    semantic: Var,
}

/// Multimodal spelling corrector.
#[derive(Clone, Debug)]
pub struct NamBert<T> {
    config: ModelConfig,
    vocab: Vocab,
    pinyin: PinyinTable,
    glyphs: GlyphAtlas,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> NamBert<T> {
    /// Fresh model with seeded initialization. The model keeps its own copy of
    /// every supplied pinyin code and glyph, including those of characters
    /// outside the vocabulary, so out-of-vocabulary inputs still carry
    /// phonetic and graphemic features.
    pub fn new(
        config: ModelConfig,
        vocab: Vocab,
        pinyin: &PinyinTable,
        glyphs: &GlyphAtlas,
        seed: u64,
    ) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "config vocab_size {} but vocabulary has {} ids",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, seed)?;
        let pinyin = PinyinTable::from_entries(pinyin.entries());
        let mut kept = GlyphAtlas::default();
        for c in glyphs.chars() {
            kept.insert(c, glyphs.bitmap(c).clone());
        }
        Ok(Self {
            config,
            vocab,
            pinyin,
            glyphs: kept,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn pinyin(&self) -> &PinyinTable {
        &self.pinyin
    }

    pub fn glyphs(&self) -> &GlyphAtlas {
        &self.glyphs
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Batch the given examples with this model's own resources.
    pub fn batch(&self, examples: &[Example]) -> Batch {
        make_batch(examples, &self.vocab, &self.pinyin, &self.glyphs, self.config.max_seq)
    }

    /// Pinyin codes scaled by 1/26, then an affine map `6 → d_phonetic`.
    pub fn encode_phonetic(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        codes: &[PinyinCode],
        prefix: &[usize],
    ) -> Result<Var> {
        let data: Vec<T> = codes
            .iter()
            .flat_map(|c| c.codes().iter().map(|&v| T::of(v as f64 / 26.0)))
            .collect();
        let mut shape = prefix.to_vec();
        shape.push(PINYIN_LEN);
        let x = g.constant(Tensor::from_vec(&shape, data)?);
        self.layout.phonetic.forward(g, store, x)
    }

    /// Three-layer feed-forward over flattened 32×32 glyphs, GELU after the
    /// two hidden layers.
    pub fn encode_graphemic(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        pixels: &[f32],
        prefix: &[usize],
    ) -> Result<Var> {
        let mut shape = prefix.to_vec();
        shape.push(GLYPH_PIXELS);
        let x = g.constant(Tensor::from_vec(
            &shape,
            pixels.iter().map(|&p| T::of(p as f64)).collect(),
        )?);
        graphemic_forward(&self.layout.graphemic, g, store, x)
    }

    fn encode_semantic_inner(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        batch: &Batch,
        front: Option<(Var, Var)>,
    ) -> Result<SemanticOut> {
        let (b, n) = (batch.batch_size, batch.seq_len);
        if n > self.config.max_seq {
            return Err(Error::Input(format!(
                "sequence length {n} exceeds max_seq {}",
                self.config.max_seq
            )));
        }
        let table = g.param(store, self.layout.word_embeddings);
        let embeddings = g.embedding(table, &batch.ids, &[b, n])?;
        let transformer_input = match front {
            Some((hp, hg)) => {
                let fusion = self.layout.fusion.expect("front fusion layer");
                let cat = g.concat(&[embeddings, hp, hg])?;
                fusion.forward(g, store, cat)?
            }
            None => embeddings,
        };
        let pos_table = g.param(store, self.layout.position_embeddings);
        let pos_ids: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
        let pos = g.embedding(pos_table, &pos_ids, &[b, n])?;
        let mut h = g.add(transformer_input, pos)?;
        for block in &self.layout.blocks {
            h = block.forward(g, store, h, &batch.mask)?;
        }
        let h = self.layout.final_ln.forward(g, store, h)?;
        let gate = self.layout.forget_gate.forward(g, store, embeddings)?;
        let gate = g.sigmoid(gate);
        let gated = g.mul(gate, embeddings)?;
        let semantic = g.add(gated, h)?;
        Ok(SemanticOut {
            embeddings,
            transformer_input,
            gated,
            semantic,
        })
    }

    /// `H^(s) = σ(E·W_f + b_f) ⊙ E + Transformer(E + P)` with `E` the bias-free
    /// embedding lookup.
    pub fn encode_semantic(&self, g: &mut Graph<T>, store: &ParamStore<T>, batch: &Batch) -> Result<Var> {
        Ok(self.encode_semantic_inner(g, store, batch, None)?.semantic)
    }

    /// `W^(m)·[H^(s); H^(p); H^(g)] + b^(m)`, back to `d_semantic`.
    pub fn fuse(&self, g: &mut Graph<T>, store: &ParamStore<T>, hs: Var, hp: Var, hg: Var) -> Result<Var> {
        let widths = [g.shape(hs), g.shape(hp), g.shape(hg)].map(|s| s.last().copied().unwrap_or(0));
        let want = [self.config.d_semantic, self.config.d_phonetic, self.config.d_graphemic];
        if widths != want {
            return Err(Error::Dimension(format!(
                "fusion expects feature widths {want:?}, got {widths:?}"
            )));
        }
        let fusion = self
            .layout
            .fusion
            .ok_or_else(|| Error::Config("model was built for additive fusion".into()))?;
        let cat = g.concat(&[hs, hp, hg])?;
        fusion.forward(g, store, cat)
    }

    /// Full forward pass up to the logits, using `store` for parameters.
    pub fn build_with(&self, g: &mut Graph<T>, store: &ParamStore<T>, batch: &Batch) -> Result<Trace> {
        let (b, n) = (batch.batch_size, batch.seq_len);
        let (phonetic, graphemic) = if self.config.multimodal {
            (
                self.encode_phonetic(g, store, &batch.pinyin, &[b, n])?,
                self.encode_graphemic(g, store, &batch.glyphs, &[b, n])?,
            )
        } else {
            (
                g.constant(Tensor::zeros(&[b, n, self.config.d_phonetic])),
                g.constant(Tensor::zeros(&[b, n, self.config.d_graphemic])),
            )
        };
        let front = (self.config.fusion == Fusion::Front).then_some((phonetic, graphemic));
        let sem = self.encode_semantic_inner(g, store, batch, front)?;
        let fused = match self.config.fusion {
            Fusion::Posterior => self.fuse(g, store, sem.semantic, phonetic, graphemic)?,
            Fusion::Front => sem.semantic,
            Fusion::Align => {
                let (proj_p, proj_g) = self.layout.align.expect("align projections");
                let p = proj_p.forward(g, store, phonetic)?;
                let q = proj_g.forward(g, store, graphemic)?;
                let s = g.add(sem.semantic, p)?;
                g.add(s, q)?
            }
        };
        let logits = self.layout.output.forward(g, store, fused)?;
        Ok(Trace {
            embeddings: sem.embeddings,
            transformer_input: sem.transformer_input,
            gated_embeddings: sem.gated,
            semantic: sem.semantic,
            phonetic,
            graphemic,
            fused,
            logits,
        })
    }

    pub fn build(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Trace> {
        self.build_with(g, &self.params, batch)
    }

    /// Focal loss summed over scored positions, and how many were scored.
    pub fn loss_with(&self, g: &mut Graph<T>, store: &ParamStore<T>, batch: &Batch) -> Result<(Var, usize)> {
        let trace = self.build_with(g, store, batch)?;
        let targets = batch.loss_targets();
        let count = targets.iter().flatten().count();
        let alpha: Vec<T> = self
            .config
            .loss
            .alpha_vector(self.config.vocab_size)
            .into_iter()
            .map(T::of)
            .collect();
        let loss = g.focal_loss(trace.logits, &targets, &alpha, T::of(self.config.loss.gamma))?;
        Ok((loss, count))
    }

    pub fn loss(&self, g: &mut Graph<T>, batch: &Batch) -> Result<(Var, usize)> {
        self.loss_with(g, &self.params, batch)
    }

    /// Per-position probability distributions `[B, n, vocab_size]`.
    pub fn forward(&self, batch: &Batch) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let trace = self.build(&mut g, batch)?;
        let probs = g.masked_softmax(trace.logits, None, 1)?;
        let out = g.value(probs).clone();
        if !out.all_finite() {
            return Err(Error::Numerical("non-finite probabilities in forward pass".into()));
        }
        Ok(out)
    }

    /// Correct sentences of any length; output lengths equal input lengths.
    pub fn correct(&self, sentences: &[Vec<char>]) -> Result<Vec<Vec<char>>> {
        let window = self.config.max_seq;
        let mut pieces = Vec::new();
        let mut owners = Vec::new();
        for (i, s) in sentences.iter().enumerate() {
            for chunk in s.chunks(window) {
                pieces.push(Example {
                    id: String::new(),
                    source: chunk.to_vec(),
                    target: chunk.to_vec(),
                });
                owners.push(i);
            }
        }
        let mut out: Vec<Vec<char>> = vec![Vec::new(); sentences.len()];
        for (chunk, own) in pieces.chunks(INFERENCE_BATCH).zip(owners.chunks(INFERENCE_BATCH)) {
            let batch = self.batch(chunk);
            let probs = self.forward(&batch)?;
            for (fixed, &o) in decode(&probs, &batch.sources, &self.vocab).into_iter().zip(own) {
                out[o].extend(fixed);
            }
        }
        Ok(out)
    }

    pub fn correct_str(&self, sentence: &str) -> Result<String> {
        let chars: Vec<char> = sentence.chars().collect();
        Ok(self.correct(&[chars])?.remove(0).into_iter().collect())
    }

    /// Most likely real character (ids ≥ 4) at each requested position.
    pub fn predict_chars(&self, batch: &Batch, positions: &[(usize, usize)]) -> Result<Vec<char>> {
        let probs = self.forward(batch)?;
        let m = self.config.vocab_size;
        positions
            .iter()
            .map(|&(b, i)| {
                let off = (b * batch.seq_len + i) * m;
                let row = &probs.data()[off + FIRST_CHAR_ID..off + m];
                let mut best = 0;
                for (j, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = j;
                    }
                }
                self.vocab
                    .char_of(best + FIRST_CHAR_ID)
                    .ok_or_else(|| Error::Input("empty vocabulary".into()))
            })
            .collect()
    }

    /// Graphemic-encoder parameter names, in layout order.
    pub fn graphemic_param_names() -> [&'static str; 6] {
        [
            "graphemic.fc1.weight",
            "graphemic.fc1.bias",
            "graphemic.fc2.weight",
            "graphemic.fc2.bias",
            "graphemic.fc3.weight",
            "graphemic.fc3.bias",
        ]
    }

    /// Characters with stored resources that are not in the vocabulary.
    pub fn extra_chars(&self) -> Vec<char> {
        let mut out: Vec<char> = self
            .pinyin
            .entries()
            .map(|(c, _)| c)
            .chain(self.glyphs.chars())
            .filter(|&c| !self.vocab.contains(c))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Expected `(name, shape)` manifest of a checkpoint for `config` with
    /// `extra` resource rows after the vocabulary.
    pub fn manifest(config: &ModelConfig, extra: usize) -> Result<Vec<(String, Vec<usize>)>> {
        let mut store = ParamStore::<f32>::new();
        Layout::build(config, &mut store, 0)?;
        let mut out: Vec<(String, Vec<usize>)> =
            store.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        let rows = config.vocab_size + extra;
        out.push(("aux.pinyin".into(), vec![rows, PINYIN_LEN]));
        out.push(("aux.glyphs".into(), vec![rows, GLYPH_PIXELS]));
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let extra = self.extra_chars();
        let m = self.config.vocab_size + extra.len();
        let mut tensors: Vec<(String, Tensor<f32>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.cast::<f32>()))
            .collect();
        let mut codes = vec![0f32; m * PINYIN_LEN];
        let mut px = vec![0f32; m * GLYPH_PIXELS];
        for (id, c) in self.resource_rows(&extra) {
            if let Some(code) = self.pinyin.get(c) {
                for (j, &v) in code.codes().iter().enumerate() {
                    codes[id * PINYIN_LEN + j] = v as f32;
                }
            }
            if let Some(b) = self.glyphs.get(c) {
                px[id * GLYPH_PIXELS..(id + 1) * GLYPH_PIXELS].copy_from_slice(b.pixels());
            }
        }
        tensors.push(("aux.pinyin".into(), Tensor::from_vec(&[m, PINYIN_LEN], codes)?));
        tensors.push(("aux.glyphs".into(), Tensor::from_vec(&[m, GLYPH_PIXELS], px)?));
        write_checkpoint(path, MODEL_KIND, &self.config, &self.vocab, &extra, &tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = read_checkpoint(path, |h: &CheckpointHeader| {
            if h.kind != MODEL_KIND {
                return Err(Error::Format(format!(
                    "expected a {MODEL_KIND} checkpoint, found {}",
                    h.kind
                )));
            }
            if h.vocab.len() != h.config.vocab_size {
                return Err(Error::Format(format!(
                    "header vocabulary has {} ids but config says {}",
                    h.vocab.len(),
                    h.config.vocab_size
                )));
            }
            Self::manifest(&h.config, h.extra_chars.len())
        })?;
        let mut tensors = ckpt.tensors.into_iter();
        let names: Vec<String> = ckpt.header.tensors.iter().map(|t| t.name.clone()).collect();
        let extra = ckpt.header.extra_chars.clone();
        let mut pinyin_entries = Vec::new();
        let mut glyphs = GlyphAtlas::default();
        let mut model = {
            let config = ckpt.header.config.clone();
            let vocab = ckpt.header.vocab.clone();
            let mut params = ParamStore::new();
            let layout = Layout::build(&config, &mut params, 0)?;
            NamBert {
                config,
                vocab,
                pinyin: PinyinTable::default(),
                glyphs: GlyphAtlas::default(),
                params,
                layout,
            }
        };
        for name in names {
            let t = tensors.next().expect("manifest and tensors agree");
            match name.as_str() {
                "aux.pinyin" => {
                    for (id, c) in model.resource_rows(&extra) {
                        let row = t.row(id);
                        if row[0] != 0.0 {
                            let mut code = [0u8; PINYIN_LEN];
                            for (d, &v) in code.iter_mut().zip(row) {
                                *d = v as u8;
                            }
                            pinyin_entries.push((c, PinyinCode(code)));
                        }
                    }
                }
                "aux.glyphs" => {
                    for (id, c) in model.resource_rows(&extra) {
                        let row = t.row(id);
                        if row.iter().any(|&v| v != 0.0) {
                            glyphs.insert(c, GlyphBitmap::from_pixels(row.to_vec())?);
                        }
                    }
                }
                _ => model.params.set(&name, t.cast())?,
            }
        }
        model.pinyin = PinyinTable::from_entries(pinyin_entries);
        model.glyphs = glyphs;
        Ok(model)
    }

    /// `(row, char)` for every stored resource row: vocabulary characters at
    /// their ids, then `extra` after the vocabulary.
    fn resource_rows(&self, extra: &[char]) -> Vec<(usize, char)> {
        let m = self.config.vocab_size;
        self.vocab
            .chars()
            .iter()
            .enumerate()
            .map(|(k, &c)| (FIRST_CHAR_ID + k, c))
            .chain(extra.iter().enumerate().map(|(k, &c)| (m + k, c)))
            .collect()
    }

    /// Copy graphemic-encoder weights from a store holding them under the
    /// same names.
    pub fn set_glyph_encoder(&mut self, encoder: &ParamStore<T>) -> Result<()> {
        for name in Self::graphemic_param_names() {
            let t = encoder
                .get(name)
                .ok_or_else(|| Error::Config(format!("glyph encoder lacks {name}")))?;
            self.params.set(name, t.clone())?;
        }
        Ok(())
    }

    /// Save only the graphemic encoder.
    pub fn save_glyph_encoder(&self, path: impl AsRef<Path>) -> Result<()> {
        save_glyph_encoder(&self.params, &self.config, path)
    }

    /// Overwrite the graphemic encoder with weights from a glyph-encoder
    /// checkpoint of matching shape.
    pub fn load_glyph_encoder(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let names = Self::graphemic_param_names();
        let want: Vec<(String, Vec<usize>)> = names
            .iter()
            .map(|n| {
                (
                    n.to_string(),
                    self.params.get(n).expect("graphemic param").shape().to_vec(),
                )
            })
            .collect();
        let ckpt = read_checkpoint(path, |h| {
            if h.kind != GLYPH_ENCODER_KIND {
                return Err(Error::Format(format!(
                    "expected a {GLYPH_ENCODER_KIND} checkpoint, found {}",
                    h.kind
                )));
            }
            Ok(want.clone())
        })?;
        for (entry, t) in ckpt.header.tensors.iter().zip(ckpt.tensors) {
            self.params.set(&entry.name, t.cast())?;
        }
        Ok(())
    }
}

pub(crate) fn graphemic_forward<T: Real>(
    layers: &[Linear; 3],
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
) -> Result<Var> {
    let h = layers[0].forward(g, store, x)?;
    let h = g.gelu(h);
    let h = layers[1].forward(g, store, h)?;
    let h = g.gelu(h);
    layers[2].forward(g, store, h)
}

/// Write the graphemic-encoder tensors of `store` as a glyph-encoder checkpoint.
pub fn save_glyph_encoder<T: Real>(store: &ParamStore<T>, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    let tensors: Vec<(String, Tensor<f32>)> = NamBert::<T>::graphemic_param_names()
        .iter()
        .map(|n| {
            store
                .get(n)
                .map(|t| (n.to_string(), t.cast::<f32>()))
                .ok_or_else(|| Error::Config(format!("missing parameter {n}")))
        })
        .collect::<Result<_>>()?;
    write_checkpoint(path, GLYPH_ENCODER_KIND, config, &Vocab::default(), &[], &tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chardata::{build_vocab, KEEP_ID};

    fn tiny_model(fusion: Fusion, multimodal: bool) -> NamBert<f64> {
        let vocab = build_vocab(&["我爱中国人民"]);
        let mut cfg = ModelConfig::toy(vocab.len());
        cfg.fusion = fusion;
        cfg.multimodal = multimodal;
        let pinyin = PinyinTable::from_entries([('我', PinyinCode::from_reading("wo").unwrap())]);
        NamBert::new(cfg, vocab, &pinyin, &GlyphAtlas::default(), 11).unwrap()
    }

    fn batch_of(model: &NamBert<f64>, s: &[&str]) -> Batch {
        let ex: Vec<Example> = s.iter().map(|s| Example::new("t", s, s).unwrap()).collect();
        model.batch(&ex)
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let model = tiny_model(Fusion::Posterior, true);
        let batch = batch_of(&model, &["我爱中国", "人民"]);
        let probs = model.forward(&batch).unwrap();
        assert_eq!(probs.shape(), &[2, 4, model.config().vocab_size]);
        for row in probs.data().chunks(model.config().vocab_size) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_code_gives_zero_phonetic_features_with_zero_bias() {
        let model = tiny_model(Fusion::Posterior, true);
        let mut g = Graph::new();
        let hp = model
            .encode_phonetic(&mut g, &model.params, &[PinyinCode::EMPTY; 2], &[1, 2])
            .unwrap();
        assert!(g.value(hp).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_phonetic_map_scales_codes() {
        let mut model = tiny_model(Fusion::Posterior, true);
        let mut eye = vec![0.0; 36];
        for i in 0..6 {
            eye[i * 7] = 1.0;
        }
        model
            .params
            .set("phonetic.weight", Tensor::from_vec(&[6, 6], eye).unwrap())
            .unwrap();
        let mut g = Graph::new();
        let code = PinyinCode([13, 1, 0, 0, 0, 0]);
        let hp = model.encode_phonetic(&mut g, &model.params, &[code], &[1, 1]).unwrap();
        let want = [13.0 / 26.0, 1.0 / 26.0, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in g.value(hp).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn blank_glyph_with_zero_biases_gives_zero_features() {
        let model = tiny_model(Fusion::Posterior, true);
        let mut g = Graph::new();
        let hg = model
            .encode_graphemic(&mut g, &model.params, &vec![0.0; GLYPH_PIXELS], &[1, 1])
            .unwrap();
        assert_eq!(g.shape(hg), &[1, 1, model.config().d_graphemic]);
        assert!(g.value(hg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forget_gate_at_zero_halves_embeddings() {
        let mut model = tiny_model(Fusion::Posterior, true);
        let d = model.config().d_semantic;
        model
            .params
            .set("semantic.forget_gate.weight", Tensor::zeros(&[d, d]))
            .unwrap();
        let batch = batch_of(&model, &["我爱中国"]);
        let mut g = Graph::new();
        let t = model.build(&mut g, &batch).unwrap();
        for (gated, e) in g
            .value(t.gated_embeddings)
            .data()
            .iter()
            .zip(g.value(t.embeddings).data())
        {
            assert!((gated - 0.5 * e).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_forget_gate_leaves_transformer_output() {
        let mut model = tiny_model(Fusion::Posterior, true);
        let d = model.config().d_semantic;
        model
            .params
            .set("semantic.forget_gate.weight", Tensor::zeros(&[d, d]))
            .unwrap();
        model
            .params
            .set("semantic.forget_gate.bias", Tensor::full(&[d], -30.0))
            .unwrap();
        let batch = batch_of(&model, &["我爱中国"]);
        let mut g = Graph::new();
        let t = model.build(&mut g, &batch).unwrap();
        for (gated, e) in g
            .value(t.gated_embeddings)
            .data()
            .iter()
            .zip(g.value(t.embeddings).data())
        {
            // σ(−30) ≈ 9.4e-14
            assert!((gated / e).abs() < 1e-12 || *e == 0.0);
        }
    }

    #[test]
    fn fusion_rejects_wrong_widths() {
        let model = tiny_model(Fusion::Posterior, true);
        let mut g = Graph::new();
        let hs = g.constant(Tensor::zeros(&[1, 2, 16]));
        let hp = g.constant(Tensor::zeros(&[1, 2, 5]));
        let hg = g.constant(Tensor::zeros(&[1, 2, 4]));
        assert!(matches!(
            model.fuse(&mut g, &model.params, hs, hp, hg),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn ablation_shapes() {
        for fusion in [Fusion::Posterior, Fusion::Front, Fusion::Align] {
            let model = tiny_model(fusion, true);
            let batch = batch_of(&model, &["我爱中国"]);
            let mut g = Graph::new();
            let t = model.build(&mut g, &batch).unwrap();
            assert_eq!(g.shape(t.fused), &[1, 4, 16], "{fusion:?}");
            match fusion {
                Fusion::Front => assert_ne!(t.transformer_input, t.embeddings),
                _ => assert_eq!(t.transformer_input, t.embeddings),
            }
        }
    }

    #[test]
    fn decode_of_forward_keeps_length() {
        let model = tiny_model(Fusion::Posterior, true);
        let out = model
            .correct(&["我爱中国人民我爱中国".chars().collect(), vec![]])
            .unwrap();
        assert_eq!(out[0].len(), 10);
        assert!(out[1].is_empty());
        assert_eq!(KEEP_ID, 1);
    }

    #[test]
    fn out_of_range_ids_are_input_errors() {
        let model = tiny_model(Fusion::Posterior, true);
        let mut batch = batch_of(&model, &["我爱"]);
        batch.ids[0] = 999;
        let mut g = Graph::new();
        assert!(matches!(model.build(&mut g, &batch), Err(Error::Input(_))));
    }
}
