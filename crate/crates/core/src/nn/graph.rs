use std::collections::HashMap;

use crate::error::{Error, Result};

use super::kernels::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::loss::PROB_FLOOR;
use super::{ParamId, ParamStore, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

enum Op<T> {
    Leaf,
    Param,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    SwapAxes12(Var),
    Sum(Var),
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
    Focal {
        logits: Var,
        targets: Vec<Option<usize>>,
        alpha: Vec<T>,
        gamma: T,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
/// already topologically sorted for the backward sweep.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    clamped: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            clamped: 0,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// How many probabilities were raised to the floor by loss nodes.
    pub fn clamped_probabilities(&self) -> usize {
        self.clamped
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Bring a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, &[]);
        self.params.insert(id, v);
        v
    }

    /// `x[..., k] · w[k, n] + b[n]`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let k = *xs.last().unwrap_or(&1);
        if ws.len() != 2 || ws[0] != k {
            return Err(dim_err("linear", &xs, &ws));
        }
        let n = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(dim_err("linear bias", &ws, self.shape(b)));
            }
        }
        let rows = self.value(x).len() / k.max(1);
        let mut out = vec![T::zero(); rows * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, rows, k, n);
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched matmul over all leading axes: `a[..., m, k] · b[..., k, n]`,
    /// or `a · bᵀ` with `b[..., n, k]` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() < 2 || as_.len() != bs.len() || as_[..as_.len() - 2] != bs[..bs.len() - 2] {
            return Err(dim_err("bmm", &as_, &bs));
        }
        let r = as_.len();
        let (m, k) = (as_[r - 2], as_[r - 1]);
        let (kb, n) = if trans_b {
            (bs[r - 1], bs[r - 2])
        } else {
            (bs[r - 2], bs[r - 1])
        };
        if kb != k {
            return Err(dim_err("bmm", &as_, &bs));
        }
        let batch: usize = as_[..r - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let ai = &ad[i * m * k..(i + 1) * m * k];
            let bi = &bd[i * k * n..(i + 1) * k * n];
            let oi = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                matmul_bt_acc(ai, bi, oi, m, k, n);
            } else {
                matmul_acc(ai, bi, oi, m, k, n);
            }
        }
        let mut shape = as_;
        shape[r - 1] = n;
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| gelu(v).0);
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis with optional key masking.
    ///
    /// `key_mask` holds one validity flag per key for each group of
    /// `rows_per_group` consecutive rows, so a `[B, h, n, n]` score tensor takes
    /// a `[B, n]` mask with `rows_per_group = h * n`. Masked keys get probability
    /// exactly 0; a row with every key masked comes out all-zero.
    pub fn masked_softmax(&mut self, x: Var, key_mask: Option<&[bool]>, rows_per_group: usize) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        let rows = xv.rows();
        if let Some(mask) = key_mask {
            if rows_per_group == 0 || !rows.is_multiple_of(rows_per_group) || mask.len() != rows / rows_per_group * n {
                return Err(Error::Dimension(format!(
                    "masked_softmax: mask of {} entries does not fit {:?} with {rows_per_group} rows per group",
                    mask.len(),
                    xv.shape()
                )));
            }
        }
        let mut out = vec![T::zero(); xv.len()];
        for (r, (src, dst)) in xv.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let valid = |j: usize| match key_mask {
                Some(mask) => mask[(r / rows_per_group) * n + j],
                None => true,
            };
            softmax_row(src, dst, valid);
        }
        let out = Tensor::from_vec(xv.shape(), out)?;
        Ok(self.push(out, Op::MaskedSoftmax(x), &[x]))
    }

    /// Layer normalization over the last axis followed by `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dim_err("layer_norm", xv.shape(), self.shape(gamma)));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.rows();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        let df = T::of(d as f64);
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
            let is = T::one() / (var + T::of(eps)).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_vec(xv.shape(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Row lookup: output shape is `prefix ++ [d]` for a `[rows, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize], prefix: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::Dimension(format!("embedding table must be 2-D, got {ts:?}")));
        }
        if prefix.iter().product::<usize>() != ids.len() {
            return Err(Error::Dimension(format!(
                "embedding: {} ids do not fill shape {prefix:?}",
                ids.len()
            )));
        }
        let (rows, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Input(format!("id {bad} out of range for table of {rows} rows")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let mut shape = prefix.to_vec();
        shape.push(d);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(dim_err("concat", self.shape(first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Concat(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `[a, b, c, d] → [a, c, b, d]`
    pub fn swap_axes12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::Dimension(format!("swap_axes12 needs 4-D input, got {s:?}")));
        }
        let out = swap12(self.value(x).data(), [s[0], s[1], s[2], s[3]]);
        let out = Tensor::from_vec(&[s[0], s[2], s[1], s[3]], out)?;
        Ok(self.push(out, Op::SwapAxes12(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `Σ x ⊙ w` against a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        if weights.shape() != self.shape(x) {
            return Err(dim_err("weighted_sum", self.shape(x), weights.shape()));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    /// Focal loss summed over rows of `logits[..., m]`:
    /// `Σ_i −α[y_i] (1 − p_i)^γ log p_i` with `p_i = softmax(logits_i)[y_i]`.
    ///
    /// Rows whose target is `None` are skipped. Probabilities below
    /// [`PROB_FLOOR`] are clamped and counted.
    pub fn focal_loss(&mut self, logits: Var, targets: &[Option<usize>], alpha: &[T], gamma: T) -> Result<Var> {
        let lv = self.value(logits);
        let m = lv.last_dim();
        if lv.rows() != targets.len() {
            return Err(Error::Dimension(format!(
                "focal_loss: {} rows but {} targets",
                lv.rows(),
                targets.len()
            )));
        }
        if alpha.len() != m {
            return Err(Error::Dimension(format!(
                "focal_loss: {} class weights for {m} classes",
                alpha.len()
            )));
        }
        if gamma < T::zero() {
            return Err(Error::Config("focal gamma must be >= 0".into()));
        }
        let mut probs = vec![T::zero(); lv.len()];
        let mut total = T::zero();
        let mut clamped = 0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= m {
                return Err(Error::Input(format!("target {t} out of range for {m} classes")));
            }
            let row = lv.row(r);
            let (q, lse) = softmax_with_lse(row);
            let p = q[t];
            let (p_c, log_p) = if p < T::of(PROB_FLOOR) {
                clamped += 1;
                (T::of(PROB_FLOOR), T::of(PROB_FLOOR).ln())
            } else {
                (p, row[t] - lse)
            };
            total += -alpha[t] * focal_factor(p_c, gamma) * log_p;
            probs[r * m..(r + 1) * m].copy_from_slice(&q);
        }
        self.clamped += clamped;
        Ok(self.push(
            Tensor::scalar(total),
            Op::Focal {
                logits,
                targets: targets.to_vec(),
                alpha: alpha.to_vec(),
                gamma,
                probs,
            },
            &[logits],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backward_node(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = dy.len() / n.max(1);
                if needs(*x) {
                    let mut dx = vec![T::zero(); rows * k];
                    matmul_bt_acc(dy.data(), wv.data(), &mut dx, rows, n, k);
                    accumulate(grads, *x, xv.shape(), dx);
                }
                if needs(*w) {
                    let mut dw = vec![T::zero(); k * n];
                    matmul_at_acc(xv.data(), dy.data(), &mut dw, rows, k, n);
                    accumulate(grads, *w, wv.shape(), dw);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![T::zero(); n];
                        for row in dy.data().chunks(n) {
                            for (d, &g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        accumulate(grads, *b, &[n], db);
                    }
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (av, bv) = (val(*a), val(*b));
                let r = av.shape().len();
                let (m, k) = (av.shape()[r - 2], av.shape()[r - 1]);
                let n = dy.shape()[r - 1];
                let batch: usize = av.shape()[..r - 2].iter().product();
                let mut da = needs(*a).then(|| vec![T::zero(); av.len()]);
                let mut db = needs(*b).then(|| vec![T::zero(); bv.len()]);
                for i in 0..batch {
                    let dyi = &dy.data()[i * m * n..(i + 1) * m * n];
                    let ai = &av.data()[i * m * k..(i + 1) * m * k];
                    let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        // c = a · bᵀ, b is [n, k]
                        if let Some(da) = da.as_mut() {
                            matmul_acc(dyi, bi, &mut da[i * m * k..(i + 1) * m * k], m, n, k);
                        }
                        if let Some(db) = db.as_mut() {
                            matmul_at_acc(dyi, ai, &mut db[i * n * k..(i + 1) * n * k], m, n, k);
                        }
                    } else {
                        if let Some(da) = da.as_mut() {
                            matmul_bt_acc(dyi, bi, &mut da[i * m * k..(i + 1) * m * k], m, n, k);
                        }
                        if let Some(db) = db.as_mut() {
                            matmul_at_acc(ai, dyi, &mut db[i * k * n..(i + 1) * k * n], m, k, n);
                        }
                    }
                }
                if let Some(da) = da {
                    accumulate(grads, *a, av.shape(), da);
                }
                if let Some(db) = db {
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        accumulate(grads, v, dy.shape(), dy.data().to_vec());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let d = zip_map(dy.data(), bv.data(), |g, y| g * y);
                    accumulate(grads, *a, av.shape(), d);
                }
                if needs(*b) {
                    let d = zip_map(dy.data(), av.data(), |g, x| g * x);
                    accumulate(grads, *b, bv.shape(), d);
                }
            }
            Op::Scale(x, c) => {
                let d = dy.data().iter().map(|&g| g * *c).collect();
                accumulate(grads, *x, dy.shape(), d);
            }
            Op::Sigmoid(x) => {
                let d = zip_map(dy.data(), node.value.data(), |g, s| g * s * (T::one() - s));
                accumulate(grads, *x, dy.shape(), d);
            }
            Op::Tanh(x) => {
                let d = zip_map(dy.data(), node.value.data(), |g, t| g * (T::one() - t * t));
                accumulate(grads, *x, dy.shape(), d);
            }
            Op::Gelu(x) => {
                let d = zip_map(dy.data(), val(*x).data(), |g, v| g * gelu(v).1);
                accumulate(grads, *x, dy.shape(), d);
            }
            Op::MaskedSoftmax(x) => {
                let n = node.value.last_dim();
                let mut dx = vec![T::zero(); dy.len()];
                for ((p, g), out) in node
                    .value
                    .data()
                    .chunks(n)
                    .zip(dy.data().chunks(n))
                    .zip(dx.chunks_mut(n))
                {
                    let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        out[j] = p[j] * (g[j] - dot);
                    }
                }
                accumulate(grads, *x, dy.shape(), dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gv = val(*gamma).data();
                let mut dx = vec![T::zero(); dy.len()];
                let mut dg = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let df = T::of(d as f64);
                for (r, g) in dy.data().chunks(d).enumerate() {
                    let h = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        let dh = g[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * h[j];
                        dg[j] += g[j] * h[j];
                        dbeta[j] += g[j];
                    }
                    let scale = inv_std[r] / df;
                    for j in 0..d {
                        let dh = g[j] * gv[j];
                        dx[r * d + j] = scale * (df * dh - sum_dh - h[j] * sum_dh_h);
                    }
                }
                if needs(*x) {
                    accumulate(grads, *x, dy.shape(), dx);
                }
                if needs(*gamma) {
                    accumulate(grads, *gamma, &[d], dg);
                }
                if needs(*beta) {
                    accumulate(grads, *beta, &[d], dbeta);
                }
            }
            Op::Embedding { table, ids } => {
                let ts = val(*table).shape();
                let d = ts[1];
                let mut dt = vec![T::zero(); ts[0] * d];
                for (&i, g) in ids.iter().zip(dy.data().chunks(d)) {
                    for (t, &v) in dt[i * d..(i + 1) * d].iter_mut().zip(g) {
                        *t += v;
                    }
                }
                accumulate(grads, *table, ts, dt);
            }
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.last_dim();
                    if needs(p) {
                        let mut dp = Vec::with_capacity(pv.len());
                        for r in 0..rows {
                            dp.extend_from_slice(&dy.data()[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, pv.shape(), dp);
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, val(*x).shape(), dy.data().to_vec());
            }
            Op::SwapAxes12(x) => {
                let s = dy.shape();
                let d = swap12(dy.data(), [s[0], s[1], s[2], s[3]]);
                accumulate(grads, *x, val(*x).shape(), d);
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                accumulate(grads, *x, val(*x).shape(), vec![g; val(*x).len()]);
            }
            Op::WeightedSum { x, weights } => {
                let g = dy.data()[0];
                let d = weights.data().iter().map(|&w| w * g).collect();
                accumulate(grads, *x, weights.shape(), d);
            }
            Op::Focal {
                logits,
                targets,
                alpha,
                gamma,
                probs,
            } => {
                let lv = val(*logits);
                let m = lv.last_dim();
                let g = dy.data()[0];
                let mut dz = vec![T::zero(); lv.len()];
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let q = &probs[r * m..(r + 1) * m];
                    let p = q[t];
                    let dl_dp = focal_dp(p, alpha[t], *gamma);
                    let out = &mut dz[r * m..(r + 1) * m];
                    for j in 0..m {
                        let delta = if j == t { T::one() } else { T::zero() };
                        out[j] = g * dl_dp * p * (delta - q[j]);
                    }
                }
                accumulate(grads, *logits, lv.shape(), dz);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

impl<T: Real> Graph<T> {
    /// Add the gradients of every parameter on the tape into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], data: Vec<T>) {
    match grads[v.0].as_mut() {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(data) {
                *a += b;
            }
        }
        None => grads[v.0] = Some(Tensor::from_vec(shape, data).expect("gradient shape")),
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn swap12<T: Real>(src: &[T], [a, b, c, d]: [usize; 4]) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let from = ((i * b + j) * c + k) * d;
                let to = ((i * c + k) * b + j) * d;
                out[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
    out
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// GELU value and derivative.
fn gelu<T: Real>(x: T) -> (T, T) {
    let c = T::of(SQRT_2_OVER_PI);
    let a = T::of(GELU_COEF);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let value = half * x * (T::one() + t);
    let du = c * (T::one() + T::of(3.0) * a * x * x);
    let grad = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    (value, grad)
}

fn softmax_row<T: Real>(src: &[T], dst: &mut [T], valid: impl Fn(usize) -> bool) {
    let mut max = T::neg_infinity();
    for (j, &v) in src.iter().enumerate() {
        if valid(j) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        dst.iter_mut().for_each(|d| *d = T::zero());
        return;
    }
    let mut total = T::zero();
    for (j, (&v, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
        *d = if valid(j) { (v - max).exp() } else { T::zero() };
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
}

/// Softmax of a row together with its log-sum-exp.
pub(crate) fn softmax_with_lse<T: Real>(row: &[T]) -> (Vec<T>, T) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let q = exps.into_iter().map(|e| e / total).collect();
    (q, max + total.ln())
}

fn focal_factor<T: Real>(p: T, gamma: T) -> T {
    if gamma == T::zero() {
        T::one()
    } else {
        (T::one() - p).powf(gamma)
    }
}

/// d/dp of `−α (1 − p)^γ log p`.
fn focal_dp<T: Real>(p: T, alpha: T, gamma: T) -> T {
    let p_c = p.max(T::of(PROB_FLOOR));
    let one_minus = T::one() - p_c;
    let mut d = -focal_factor(p_c, gamma) / p_c;
    if gamma > T::zero() && one_minus > T::zero() {
        d += gamma * one_minus.powf(gamma - T::one()) * p_c.ln();
    }
    alpha * d
}
