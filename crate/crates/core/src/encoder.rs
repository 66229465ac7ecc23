//! Post-LN transformer encoder built on the gradient tape.
//!
//! The forward pass is split into stages (embedding, a range of layers,
//! pooling + head) so that a merged model can run the shared stack once
//! and resume each task branch from its tap point with the exact kernels a
//! standalone model would use.

use std::ops::RangeInclusive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{HeadKind, PAD_ID};
use crate::error::{Error, Result};
use crate::params::{layer_param, ParamStore, EMBEDDING_PARAMS, LAYER_COMPONENTS};
use crate::tensor::{Tape, Tensor, Var};

const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults: 4 layers, width 32, 2 heads.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig { num_layers: 4, hidden_dim: 32, num_heads: 2, ffn_dim: 64, vocab_size, max_seq_len: 32 }
    }

    /// BERT-base geometry.
    pub fn bert_base(vocab_size: usize) -> Self {
        EncoderConfig { num_layers: 12, hidden_dim: 768, num_heads: 12, ffn_dim: 3072, vocab_size, max_seq_len: 512 }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self;
        if [c.num_layers, c.hidden_dim, c.num_heads, c.ffn_dim, c.vocab_size, c.max_seq_len].contains(&0) {
            return Err(Error::config("all encoder extents must be positive"));
        }
        if c.hidden_dim % c.num_heads != 0 {
            return Err(Error::config(format!("hidden_dim {} not divisible by num_heads {}", c.hidden_dim, c.num_heads)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Expected shape of a canonical parameter, or `None` for unknown names.
    pub fn param_shape(&self, name: &str, head: Option<HeadKind>) -> Option<Vec<usize>> {
        let (d, f) = (self.hidden_dim, self.ffn_dim);
        let shape = match name {
            "embeddings.token.weight" => vec![self.vocab_size, d],
            "embeddings.position.weight" => vec![self.max_seq_len, d],
            "embeddings.ln.gamma" | "embeddings.ln.beta" => vec![d],
            "pooler.weight" => vec![d, d],
            "pooler.bias" => vec![d],
            "head.weight" => vec![d, head?.outputs()],
            "head.bias" => vec![head?.outputs()],
            _ => {
                let component = name.strip_prefix("layer.")?.split_once('.')?.1;
                match component {
                    "ffn.intermediate.weight" => vec![d, f],
                    "ffn.intermediate.bias" => vec![f],
                    "ffn.output.weight" => vec![f, d],
                    c if c.ends_with(".weight") => vec![d, d],
                    _ => vec![d],
                }
            }
        };
        Some(shape)
    }
}

fn normal_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape from config")
}

fn init_param(cfg: &EncoderConfig, name: &str, head: Option<HeadKind>, rng: &mut ChaCha8Rng) -> Tensor {
    let shape = cfg.param_shape(name, head).expect("canonical name");
    if name.ends_with(".gamma") {
        Tensor::full(&shape, 1.0)
    } else if name.ends_with(".bias") || name.ends_with(".beta") {
        Tensor::zeros(&shape)
    } else {
        normal_tensor(&shape, rng)
    }
}

/// A freshly initialized (stand-in for pre-trained) encoder: embeddings,
/// `num_layers` layers and the pooler, all marked frozen.
pub fn init_base(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::default();
    let mut names: Vec<String> = EMBEDDING_PARAMS.iter().map(|s| s.to_string()).collect();
    for i in 1..=cfg.num_layers {
        names.extend(LAYER_COMPONENTS.iter().map(|c| layer_param(i, c)));
    }
    names.extend(["pooler.weight".to_string(), "pooler.bias".to_string()]);
    for name in names {
        let t = init_param(cfg, &name, None, &mut rng);
        store.insert(&name, t, false);
    }
    Ok(store)
}

/// Inserts a freshly initialized, trainable task head into `store`.
pub fn init_head(store: &mut ParamStore, cfg: &EncoderConfig, kind: HeadKind, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4144);
    for name in ["head.weight", "head.bias"] {
        let t = init_param(cfg, name, Some(kind), &mut rng);
        store.insert(name, t, true);
    }
}

/// Padded token ids with a key mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    ids: Vec<u32>,
    mask: Vec<bool>,
    size: usize,
    seq_len: usize,
}

impl Batch {
    /// Pads `seqs` with `[PAD]` to the longest sequence.
    pub fn new<S: AsRef<[u32]>>(seqs: &[S]) -> Result<Self> {
        let seq_len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        if seqs.is_empty() || seq_len == 0 {
            return Err(Error::input("empty batch"));
        }
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut mask = Vec::with_capacity(seqs.len() * seq_len);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat(PAD_ID).take(seq_len - s.len()));
            mask.extend((0..seq_len).map(|j| j < s.len()));
        }
        Batch::from_parts(ids, mask, seqs.len())
    }

    /// Explicit ids and mask, `size` rows.
    pub fn from_parts(ids: Vec<u32>, mask: Vec<bool>, size: usize) -> Result<Self> {
        if size == 0 || ids.len() != mask.len() || ids.len() % size != 0 || ids.is_empty() {
            return Err(Error::input("batch ids and mask disagree"));
        }
        let seq_len = ids.len() / size;
        if let Some(row) = mask.chunks(seq_len).position(|m| !m.iter().any(|&k| k)) {
            return Err(Error::input(format!("row {row} of the batch is all padding")));
        }
        Ok(Batch { ids, mask, size, seq_len })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Read access to named weights.
pub trait Weights {
    fn lookup(&self, name: &str) -> Option<(&Tensor, bool)>;
}

impl Weights for ParamStore {
    fn lookup(&self, name: &str) -> Option<(&Tensor, bool)> {
        self.param(name).map(|p| (&p.value, p.trainable))
    }
}

fn load(tape: &mut Tape, w: &dyn Weights, name: &str) -> Result<Var> {
    let (t, trainable) = w.lookup(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
    Ok(tape.param(name, t.clone(), trainable))
}

fn linear(tape: &mut Tape, w: &dyn Weights, x: Var, prefix: &str) -> Result<Var> {
    let weight = load(tape, w, &format!("{prefix}.weight"))?;
    let bias = load(tape, w, &format!("{prefix}.bias"))?;
    let y = tape.matmul(x, weight)?;
    tape.add(y, bias)
}

fn layernorm(tape: &mut Tape, w: &dyn Weights, x: Var, prefix: &str) -> Result<Var> {
    let gamma = load(tape, w, &format!("{prefix}.gamma"))?;
    let beta = load(tape, w, &format!("{prefix}.beta"))?;
    tape.layernorm(x, gamma, beta)
}

/// Token plus position embeddings, normalized. Shape `[B, S, d]`.
pub fn embed(tape: &mut Tape, w: &dyn Weights, cfg: &EncoderConfig, batch: &Batch) -> Result<Var> {
    let (b, s, d) = (batch.size(), batch.seq_len(), cfg.hidden_dim);
    if s > cfg.max_seq_len {
        return Err(Error::input(format!("sequence length {s} exceeds max_seq_len {}", cfg.max_seq_len)));
    }
    if let Some(id) = batch.ids().iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::input(format!("token id {id} outside vocabulary of {}", cfg.vocab_size)));
    }
    let tok_table = load(tape, w, "embeddings.token.weight")?;
    let pos_table = load(tape, w, "embeddings.position.weight")?;
    let tok = tape.embed_lookup(tok_table, batch.ids())?;
    let positions: Vec<u32> = (0..b).flat_map(|_| 0..s as u32).collect();
    let pos = tape.embed_lookup(pos_table, &positions)?;
    let x = tape.add(tok, pos)?;
    let x = tape.reshape(x, vec![b, s, d])?;
    layernorm(tape, w, x, "embeddings.ln")
}

/// One encoder layer (self-attention + feed-forward, post-LN).
pub fn encoder_layer(tape: &mut Tape, w: &dyn Weights, cfg: &EncoderConfig, layer: usize, x: Var, batch: &Batch) -> Result<Var> {
    let (b, s, d) = (batch.size(), batch.seq_len(), cfg.hidden_dim);
    let (h, dh) = (cfg.num_heads, cfg.head_dim());
    let p = |c: &str| format!("layer.{layer}.{c}");

    let heads = |tape: &mut Tape, name: &str| -> Result<Var> {
        let y = linear(tape, w, x, &p(name))?;
        let y = tape.reshape(y, vec![b, s, h, dh])?;
        let y = tape.transpose12(y)?;
        tape.reshape(y, vec![b * h, s, dh])
    };
    let q = heads(tape, "attn.query")?;
    let k = heads(tape, "attn.key")?;
    let v = heads(tape, "attn.value")?;

    let scores = tape.bmm(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (dh as f32).sqrt())?;
    let scores = tape.reshape(scores, vec![b, h, s, s])?;
    let scores = tape.mask_fill(scores, batch.mask())?;
    let probs = tape.softmax(scores)?;
    let probs = tape.reshape(probs, vec![b * h, s, s])?;
    let ctx = tape.bmm(probs, v, false)?;
    let ctx = tape.reshape(ctx, vec![b, h, s, dh])?;
    let ctx = tape.transpose12(ctx)?;
    let ctx = tape.reshape(ctx, vec![b, s, d])?;

    let attn = linear(tape, w, ctx, &p("attn.output"))?;
    let x = tape.add(x, attn)?;
    let x = layernorm(tape, w, x, &p("attn.ln"))?;

    let hidden = linear(tape, w, x, &p("ffn.intermediate"))?;
    let hidden = tape.gelu(hidden)?;
    let out = linear(tape, w, hidden, &p("ffn.output"))?;
    let x = tape.add(x, out)?;
    layernorm(tape, w, x, &p("ffn.ln"))
}

/// Runs layers `range` (1-based, inclusive) on `x`.
pub fn run_layers(
    tape: &mut Tape,
    w: &dyn Weights,
    cfg: &EncoderConfig,
    mut x: Var,
    batch: &Batch,
    range: RangeInclusive<usize>,
) -> Result<Var> {
    for layer in range {
        x = encoder_layer(tape, w, cfg, layer, x, batch)?;
    }
    Ok(x)
}

/// Sequence activations after layer `tap_depth` (0 = embedding output), or
/// after the last layer present in `params` when no tap is given.
pub fn forward(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &EncoderConfig,
    batch: &Batch,
    tap_depth: Option<usize>,
) -> Result<Var> {
    let depth = params.layer_count();
    let tap = tap_depth.unwrap_or(depth);
    if tap > depth {
        return Err(Error::input(format!("tap depth {tap} exceeds {depth} layers")));
    }
    let x = embed(tape, params, cfg, batch)?;
    run_layers(tape, params, cfg, x, batch, 1..=tap)
}

/// First-token pooling through `tanh(W·h + b)` followed by the task head.
/// Returns `[B, k]` logits or `[B, 1]` regression outputs.
pub fn pool_and_head(tape: &mut Tape, w: &dyn Weights, acts: Var, kind: HeadKind) -> Result<Var> {
    let shape = tape.value(acts).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::input(format!("activations must be [B, S, d], got {shape:?}")));
    }
    let d = shape[2];
    let (hw, _) = w.lookup("head.weight").ok_or_else(|| Error::MissingParam("head.weight".into()))?;
    if hw.shape() != [d, kind.outputs()] {
        return Err(Error::input(format!(
            "head weight {:?} does not match width {d} and {} outputs",
            hw.shape(),
            kind.outputs()
        )));
    }
    let cls = tape.select_token(acts, 0)?;
    let pooled = linear(tape, w, cls, "pooler")?;
    let pooled = tape.tanh(pooled)?;
    linear(tape, w, pooled, "head")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CLS_ID;

    fn cfg() -> EncoderConfig {
        EncoderConfig { num_layers: 3, hidden_dim: 8, num_heads: 2, ffn_dim: 16, vocab_size: 20, max_seq_len: 10 }
    }

    fn model(kind: HeadKind) -> ParamStore {
        let c = cfg();
        let mut p = init_base(&c, 5).unwrap();
        init_head(&mut p, &c, kind, 9);
        p
    }

    fn batch() -> Batch {
        Batch::new(&[vec![CLS_ID, 5, 6, 7, 3], vec![CLS_ID, 8, 3]]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(EncoderConfig { num_heads: 3, ..cfg() }.validate().is_err());
        assert!(EncoderConfig { num_layers: 0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn full_tap_equals_untapped_and_resume_is_bit_exact() {
        let p = model(HeadKind::Classification { classes: 2 });
        let c = cfg();
        let b = batch();
        let mut tape = Tape::inference();
        let full = forward(&mut tape, &p, &c, &b, None).unwrap();
        let full_t = tape.value(full).clone();
        let at_n = forward(&mut tape, &p, &c, &b, Some(3)).unwrap();
        assert!(tape.value(at_n).bit_eq(&full_t));
        for t in 0..=3 {
            let mut tape = Tape::inference();
            let tapped = forward(&mut tape, &p, &c, &b, Some(t)).unwrap();
            let tapped_value = tape.value(tapped).clone();
            let mut resumed_tape = Tape::inference();
            let x = resumed_tape.constant(tapped_value);
            let resumed = run_layers(&mut resumed_tape, &p, &c, x, &b, t + 1..=3).unwrap();
            assert!(resumed_tape.value(resumed).bit_eq(&full_t), "tap {t}");
        }
        let mut tape = Tape::inference();
        assert!(forward(&mut tape, &p, &c, &b, Some(4)).is_err());
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(Batch::from_parts(vec![2, 0], vec![false, false], 1).is_err());
        assert!(Batch::new::<Vec<u32>>(&[]).is_err());
        let p = model(HeadKind::Regression);
        let long: Vec<u32> = vec![4; 11];
        let mut tape = Tape::inference();
        assert!(forward(&mut tape, &p, &cfg(), &Batch::new(&[long]).unwrap(), None).is_err());
    }

    #[test]
    fn padding_tokens_do_not_leak() {
        let p = model(HeadKind::Classification { classes: 3 });
        let c = cfg();
        let run = |pad_token: u32| {
            let ids = vec![CLS_ID, 5, 3, pad_token, pad_token];
            let b = Batch::from_parts(ids, vec![true, true, true, false, false], 1).unwrap();
            let mut tape = Tape::inference();
            let acts = forward(&mut tape, &p, &c, &b, None).unwrap();
            let out = pool_and_head(&mut tape, &p, acts, HeadKind::Classification { classes: 3 }).unwrap();
            tape.value(out).clone()
        };
        assert!(run(0).bit_eq(&run(17)));
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let c = cfg();
        let mut p = model(HeadKind::Classification { classes: 2 });
        p.insert("head.weight", Tensor::zeros(&[8, 2]), true);
        p.insert("head.bias", Tensor::zeros(&[2]), true);
        let mut tape = Tape::inference();
        let acts = forward(&mut tape, &p, &c, &batch(), None).unwrap();
        let out = pool_and_head(&mut tape, &p, acts, HeadKind::Classification { classes: 2 }).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_head_is_rejected() {
        let p = model(HeadKind::Classification { classes: 2 });
        let mut tape = Tape::inference();
        let acts = forward(&mut tape, &p, &cfg(), &batch(), None).unwrap();
        assert!(pool_and_head(&mut tape, &p, acts, HeadKind::Regression).is_err());
    }
}
