use std::collections::BTreeMap;

use super::kernels::{self, LayerNormSaved};
use super::{PrimitiveKind, Tensor, MASK_FILL};
use crate::error::{Error, Result};

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, rows: usize, k: usize, n: usize },
    Bmm { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f32 },
    Sum { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, saved: LayerNormSaved },
    Softmax { a: Var },
    Gelu { a: Var },
    Tanh { a: Var },
    Embed { table: Var, ids: Vec<u32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f32> },
    KlDiv { logits: Var, target: Vec<f32>, probs: Vec<f32> },
    Mse { a: Var, b: Var },
    Reshape { a: Var },
    Transpose12 { a: Var, dims: [usize; 4] },
    SelectToken { a: Var, index: usize, dims: [usize; 3] },
    MaskFill { a: Var, keep: Vec<bool>, inner: usize, keys: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of primitive applications.
///
/// With tracing off (inference) nothing needed for backward is kept and
/// [`Tape::backward`] refuses to run.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    tracing: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn mismatch(kind: PrimitiveKind, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch { kind, detail: detail.into() }
}

impl Tape {
    /// A tracing tape.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new(), tracing: true, consumed: false }
    }

    /// A non-tracing tape for inference.
    pub fn inference() -> Self {
        Tape { tracing: false, ..Tape::new() }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers a named parameter. Only trainable parameters on a tracing
    /// tape receive gradients.
    pub fn param(&mut self, name: &str, value: Tensor, trainable: bool) -> Var {
        let requires_grad = self.tracing && trainable;
        let v = Var(self.nodes.len());
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        if requires_grad {
            self.params.push((name.to_string(), v));
        }
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        v
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, kind: PrimitiveKind, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { kind });
        }
        let requires_grad = self.tracing && inputs.iter().any(|&i| self.needs(i));
        let op = if requires_grad { op } else { Op::Leaf };
        let v = Var(self.nodes.len());
        self.nodes.push(Node { value, op, requires_grad });
        Ok(v)
    }

    /// `a[.., k] · b[k, n]`, leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = PrimitiveKind::MatMul;
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.shape().is_empty() {
            return Err(mismatch(kind, format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (k, n) = (bv.shape()[0], bv.shape()[1]);
        if av.last_dim() != k {
            return Err(mismatch(kind, format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let rows = av.len() / k;
        let out = kernels::matmul(av.data(), bv.data(), rows, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(kind, Tensor::from_parts(shape, out), Op::MatMul { a, b, rows, k, n }, &[a, b])
    }

    /// Batched `a[B,m,k] · b[B,k,n]`, or `a · bᵀ` with `b[B,n,k]` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let kind = PrimitiveKind::BatchMatMul;
        let (av, bv) = (self.value(a), self.value(b));
        let bad = || mismatch(kind, format!("{:?} x {:?} (trans_b={trans_b})", av.shape(), bv.shape()));
        if av.shape().len() != 3 || bv.shape().len() != 3 || av.shape()[0] != bv.shape()[0] {
            return Err(bad());
        }
        let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let n = if trans_b { bv.shape()[1] } else { bv.shape()[2] };
        let inner = if trans_b { bv.shape()[2] } else { bv.shape()[1] };
        if inner != k {
            return Err(bad());
        }
        let mut out = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            let ab = &av.data()[i * m * k..(i + 1) * m * k];
            let bb = &bv.data()[i * k * n..(i + 1) * k * n];
            if trans_b {
                out.extend(kernels::matmul_bt(ab, bb, m, k, n));
            } else {
                out.extend(kernels::matmul(ab, bb, m, k, n));
            }
        }
        let value = Tensor::from_parts(vec![batch, m, n], out);
        self.push(kind, value, Op::Bmm { a, b, batch, m, k, n, trans_b }, &[a, b])
    }

    /// Elementwise sum; `b` may have a shape equal to a suffix of `a`'s and
    /// is then broadcast over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = PrimitiveKind::Add;
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(kind, format!("{sa:?} + {sb:?}")));
        }
        let bd = bv.data();
        let out: Vec<f32> = av.data().chunks_exact(bd.len()).flat_map(|chunk| chunk.iter().zip(bd).map(|(x, y)| x + y)).collect();
        let value = Tensor::from_parts(sa.to_vec(), out);
        self.push(kind, value, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = PrimitiveKind::Mul;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(kind, format!("{:?} * {:?}", av.shape(), bv.shape())));
        }
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(kind, value, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        let av = self.value(a);
        let out = av.data().iter().map(|x| x * c).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(PrimitiveKind::Scale, value, Op::Scale { a, c }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(PrimitiveKind::Sum, Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    /// Layer normalization over the last axis.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let kind = PrimitiveKind::LayerNorm;
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        if xv.shape().is_empty() || gv.shape() != [d] || bv.shape() != [d] {
            return Err(mismatch(kind, format!("x {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape())));
        }
        let (y, saved) = kernels::layernorm(xv.data(), gv.data(), bv.data());
        let value = Tensor::from_parts(xv.shape().to_vec(), y);
        self.push(kind, value, Op::LayerNorm { x, gamma, beta, saved }, &[x, gamma, beta])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let y = kernels::softmax_rows(av.data(), av.last_dim());
        let value = Tensor::from_parts(av.shape().to_vec(), y);
        self.push(PrimitiveKind::Softmax, value, Op::Softmax { a }, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let y = av.data().iter().map(|&x| kernels::gelu(x)).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), y);
        self.push(PrimitiveKind::Gelu, value, Op::Gelu { a }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let y = av.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), y);
        self.push(PrimitiveKind::Tanh, value, Op::Tanh { a }, &[a])
    }

    /// Rows of `table[V, d]` selected by `ids`, shape `[ids.len(), d]`.
    pub fn embed_lookup(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let kind = PrimitiveKind::EmbedLookup;
        let tv = self.value(table);
        if tv.shape().len() != 2 || ids.is_empty() {
            return Err(mismatch(kind, format!("table {:?}, {} ids", tv.shape(), ids.len())));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(mismatch(kind, format!("id {id} out of range for {vocab} rows")));
            }
            out.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::from_parts(vec![ids.len(), d], out);
        self.push(kind, value, Op::Embed { table, ids: ids.to_vec() }, &[table])
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits[B,k])`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let kind = PrimitiveKind::CrossEntropy;
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.shape()[0] != targets.len() {
            return Err(mismatch(kind, format!("logits {:?}, {} targets", lv.shape(), targets.len())));
        }
        let k = lv.shape()[1];
        if let Some(t) = targets.iter().find(|&&t| t >= k) {
            return Err(mismatch(kind, format!("target {t} out of range for {k} classes")));
        }
        let logp = kernels::log_softmax_rows(lv.data(), k);
        let probs = kernels::softmax_rows(lv.data(), k);
        let total: f32 = targets.iter().enumerate().map(|(i, &t)| -logp[i * k + t]).sum();
        let value = Tensor::scalar(total / targets.len() as f32);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        self.push(kind, value, op, &[logits])
    }

    /// Mean over rows of `KL(target ‖ softmax(logits))`; `target` is a fixed
    /// row-stochastic matrix.
    pub fn kl_div(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let kind = PrimitiveKind::KlDiv;
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.shape() != target.shape() {
            return Err(mismatch(kind, format!("logits {:?}, target {:?}", lv.shape(), target.shape())));
        }
        let (rows, k) = (lv.shape()[0], lv.shape()[1]);
        let logp = kernels::log_softmax_rows(lv.data(), k);
        let probs = kernels::softmax_rows(lv.data(), k);
        let mut total = 0.0f32;
        for (p, lq) in target.data().iter().zip(&logp) {
            if *p > 0.0 {
                total += p * (p.ln() - lq);
            }
        }
        let value = Tensor::scalar(total / rows as f32);
        let op = Op::KlDiv { logits, target: target.to_vec(), probs };
        self.push(kind, value, op, &[logits])
    }

    /// Mean squared error between equally shaped `a` and `b`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = PrimitiveKind::Mse;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(kind, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let n = av.len() as f32;
        let s: f32 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push(kind, Tensor::scalar(s / n), Op::Mse { a, b }, &[a, b])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).reshape(shape).map_err(|e| mismatch(PrimitiveKind::Reshape, e.to_string()))?;
        self.push(PrimitiveKind::Reshape, value, Op::Reshape { a }, &[a])
    }

    /// `[a,b,c,d] -> [a,c,b,d]`
    pub fn transpose12(&mut self, a: Var) -> Result<Var> {
        let kind = PrimitiveKind::Transpose12;
        let av = self.value(a);
        let s = av.shape();
        if s.len() != 4 {
            return Err(mismatch(kind, format!("expected rank 4, got {s:?}")));
        }
        let dims = [s[0], s[1], s[2], s[3]];
        let out = kernels::transpose12(av.data(), dims);
        let value = Tensor::from_parts(vec![s[0], s[2], s[1], s[3]], out);
        self.push(kind, value, Op::Transpose12 { a, dims }, &[a])
    }

    /// `x[B,S,d] -> x[:, index, :]`
    pub fn select_token(&mut self, a: Var, index: usize) -> Result<Var> {
        let kind = PrimitiveKind::SelectToken;
        let av = self.value(a);
        let s = av.shape();
        if s.len() != 3 || index >= s[1] {
            return Err(mismatch(kind, format!("index {index} into {s:?}")));
        }
        let dims = [s[0], s[1], s[2]];
        let d = dims[2];
        let mut out = Vec::with_capacity(dims[0] * d);
        for b in 0..dims[0] {
            let off = (b * dims[1] + index) * d;
            out.extend_from_slice(&av.data()[off..off + d]);
        }
        let value = Tensor::from_parts(vec![dims[0], d], out);
        self.push(kind, value, Op::SelectToken { a, index, dims }, &[a])
    }

    /// Overwrites attention scores `x[B, .., S]` at key positions whose
    /// `key_mask[B*S]` entry is false.
    pub fn mask_fill(&mut self, a: Var, key_mask: &[bool]) -> Result<Var> {
        let kind = PrimitiveKind::MaskFill;
        let av = self.value(a);
        let s = av.shape();
        if s.len() < 2 {
            return Err(mismatch(kind, format!("expected rank >= 2, got {s:?}")));
        }
        let batch = s[0];
        let keys = s[s.len() - 1];
        if key_mask.len() != batch * keys {
            return Err(mismatch(kind, format!("mask of {} for {s:?}", key_mask.len())));
        }
        let inner = av.len() / (batch * keys);
        let mut out = av.to_vec();
        for b in 0..batch {
            let m = &key_mask[b * keys..(b + 1) * keys];
            for r in 0..inner {
                let row = &mut out[(b * inner + r) * keys..(b * inner + r + 1) * keys];
                for (o, &keep) in row.iter_mut().zip(m) {
                    if !keep {
                        *o = MASK_FILL;
                    }
                }
            }
        }
        let value = Tensor::from_parts(s.to_vec(), out);
        let op = Op::MaskFill { a, keep: key_mask.to_vec(), inner, keys };
        self.push(kind, value, op, &[a])
    }

    /// Reverse pass from a scalar `loss`. Returns a gradient for every
    /// trainable parameter registered on the tape (zeros if unreachable).
    /// The tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !self.tracing {
            return Err(Error::input("backward on a non-tracing tape"));
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::LossNotScalar(lv.shape().to_vec()));
        }
        self.consumed = true;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        let acc = |grads: &mut Vec<Option<Vec<f32>>>, v: Var, g: Vec<f32>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                slot @ None => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => leaf_grads[i] = Some(g),
                Op::MatMul { a, b, rows, k, n } => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if self_needs(nodes, *a) {
                        acc(&mut grads, *a, kernels::matmul_bt(&g, bv.data(), *rows, *n, *k));
                    }
                    if self_needs(nodes, *b) {
                        acc(&mut grads, *b, kernels::matmul_at(av.data(), &g, *rows, *k, *n));
                    }
                }
                Op::Bmm { a, b, batch, m, k, n, trans_b } => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let (m, k, n) = (*m, *k, *n);
                    let mut da = Vec::with_capacity(av.len());
                    let mut db = Vec::with_capacity(bv.len());
                    for i in 0..*batch {
                        let gb = &g[i * m * n..(i + 1) * m * n];
                        let ab = &av[i * m * k..(i + 1) * m * k];
                        let bb = &bv[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            da.extend(kernels::matmul(gb, bb, m, n, k));
                            db.extend(kernels::matmul_at(gb, ab, m, n, k));
                        } else {
                            da.extend(kernels::matmul_bt(gb, bb, m, n, k));
                            db.extend(kernels::matmul_at(ab, gb, m, k, n));
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    let blen = nodes[b.0].value.len();
                    if self_needs(nodes, *b) {
                        let mut db = vec![0.0f32; blen];
                        for chunk in g.chunks_exact(blen) {
                            db.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                        }
                        acc(&mut grads, *b, db);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(&mut grads, *a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                    acc(&mut grads, *b, g.iter().zip(av).map(|(x, y)| x * y).collect());
                }
                Op::Scale { a, c } => acc(&mut grads, *a, g.iter().map(|x| x * c).collect()),
                Op::Sum { a } => acc(&mut grads, *a, vec![g[0]; nodes[a.0].value.len()]),
                Op::LayerNorm { x, gamma, beta, saved } => {
                    let gv = nodes[gamma.0].value.data();
                    let (dx, dg, db) = kernels::layernorm_backward(&g, gv, saved);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dg);
                    acc(&mut grads, *beta, db);
                }
                Op::Softmax { a } => {
                    let y = &node.value;
                    acc(&mut grads, *a, kernels::softmax_backward(y.data(), &g, y.last_dim()));
                }
                Op::Gelu { a } => {
                    let av = nodes[a.0].value.data();
                    acc(&mut grads, *a, g.iter().zip(av).map(|(d, &x)| d * kernels::gelu_grad(x)).collect());
                }
                Op::Tanh { a } => {
                    let y = node.value.data();
                    acc(&mut grads, *a, g.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect());
                }
                Op::Embed { table, ids } => {
                    let tv = &nodes[table.0].value;
                    let d = tv.shape()[1];
                    let mut dt = vec![0.0f32; tv.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        dt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(x, y)| *x += y);
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let k = probs.len() / targets.len();
                    let scale = g[0] / targets.len() as f32;
                    let mut dl: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                    for (i, &t) in targets.iter().enumerate() {
                        dl[i * k + t] -= scale;
                    }
                    acc(&mut grads, *logits, dl);
                }
                Op::KlDiv { logits, target, probs } => {
                    let rows = nodes[logits.0].value.shape()[0];
                    let scale = g[0] / rows as f32;
                    let dl = probs.iter().zip(target).map(|(p, t)| (p - t) * scale).collect();
                    acc(&mut grads, *logits, dl);
                }
                Op::Mse { a, b } => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let scale = 2.0 * g[0] / av.len() as f32;
                    let da: Vec<f32> = av.iter().zip(bv).map(|(x, y)| (x - y) * scale).collect();
                    if self_needs(nodes, *b) {
                        acc(&mut grads, *b, da.iter().map(|x| -x).collect());
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Reshape { a } => acc(&mut grads, *a, g),
                Op::Transpose12 { a, dims } => {
                    let [p, q, r, s] = *dims;
                    acc(&mut grads, *a, kernels::transpose12(&g, [p, r, q, s]));
                }
                Op::SelectToken { a, index, dims } => {
                    let [b, s, d] = *dims;
                    let mut da = vec![0.0f32; b * s * d];
                    for bi in 0..b {
                        let off = (bi * s + index) * d;
                        da[off..off + d].copy_from_slice(&g[bi * d..(bi + 1) * d]);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::MaskFill { a, keep, inner, keys } => {
                    let mut da = g;
                    let batch = keep.len() / keys;
                    for b in 0..batch {
                        let m = &keep[b * keys..(b + 1) * keys];
                        for r in 0..*inner {
                            let row = &mut da[(b * inner + r) * keys..(b * inner + r + 1) * keys];
                            for (o, &k) in row.iter_mut().zip(m) {
                                if !k {
                                    *o = 0.0;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                }
            }
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let shape = self.nodes[v.0].value.shape().to_vec();
            let g = match leaf_grads.get_mut(v.0).and_then(Option::take) {
                Some(g) => Tensor::from_parts(shape, g),
                None => Tensor::zeros(&shape),
            };
            match out.get(name) {
                // Same parameter registered twice: gradients add.
                Some(prev) => {
                    let sum = prev.data().iter().zip(g.data()).map(|(x, y)| x + y).collect();
                    let merged = Tensor::from_parts(g.shape().to_vec(), sum);
                    out.insert(name.clone(), merged);
                }
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }
}

fn self_needs(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}
