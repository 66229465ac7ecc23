//! Single-task checkpoints and their on-disk format.
//!
//! ```text
//! "LFCK" | version: u32 LE | manifest_len: u64 LE | manifest (JSON)
//! zero padding to a 64-byte boundary
//! payload: row-major f32 LE tensors, each starting at a 64-byte offset
//! ```
//!
//! The manifest carries the encoder config, frozen depth, task-specific
//! layer count, task spec, vocabulary, base fingerprint, provenance and a
//! tensor index `{name, shape, offset, sha256}`. Offsets are relative to the
//! payload start.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{HeadKind, TaskSpec, Vocab};
use crate::encoder::{self, Batch, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{layer_param, ParamGroup, ParamStore, EMBEDDING_PARAMS, HEAD_PARAMS, LAYER_COMPONENTS, POOLER_PARAMS};
use crate::tensor::{Tape, Tensor};

pub const MAGIC: &[u8; 4] = b"LFCK";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: usize = 64;

const HEADER_LEN: usize = 4 + 4 + 8;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Identity of the pre-trained base: per-tensor hashes of the embeddings
/// and every layer, the vocabulary hash, and a digest over both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseFingerprint {
    pub digest: String,
    pub vocab: String,
    pub tensors: BTreeMap<String, String>,
}

impl BaseFingerprint {
    pub fn of(base: &ParamStore, vocab: &Vocab) -> Self {
        let tensors: BTreeMap<String, String> = base
            .iter()
            .filter(|(name, _)| matches!(ParamGroup::of(name), Some(ParamGroup::Embeddings | ParamGroup::Layer(_))))
            .map(|(name, p)| (name.to_string(), p.value.content_hash()))
            .collect();
        let vocab = sha256_hex(vocab.tokens().join("\n").as_bytes());
        let mut h = Sha256::new();
        for (name, hash) in &tensors {
            h.update(name.as_bytes());
            h.update(b":");
            h.update(hash.as_bytes());
            h.update(b"\n");
        }
        h.update(vocab.as_bytes());
        BaseFingerprint { digest: hex::encode(h.finalize()), vocab, tensors }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Base,
    FineTune,
    Distill,
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: Stage,
    /// Content hash of the checkpoint this one was derived from.
    pub parent: Option<String>,
    pub seed: Option<u64>,
    pub steps: u64,
    pub dev_score: Option<f64>,
}

impl Provenance {
    pub fn base(seed: u64) -> Self {
        Provenance { stage: Stage::Base, parent: None, seed: Some(seed), steps: 0, dev_score: None }
    }
}

/// A base model (`task: None`) or a single-task model whose layers
/// `1..=frozen_depth` and embeddings are the base's own.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub frozen_depth: usize,
    pub task_layers: usize,
    pub task: Option<TaskSpec>,
    pub vocab: Vocab,
    pub base: BaseFingerprint,
    pub provenance: Provenance,
    pub params: ParamStore,
}

impl Checkpoint {
    /// Seeded stand-in for a pre-trained encoder.
    pub fn new_base(config: EncoderConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if vocab.len() != config.vocab_size {
            return Err(Error::config(format!("vocab_size {} but vocabulary has {} entries", config.vocab_size, vocab.len())));
        }
        let params = encoder::init_base(&config, seed)?;
        let base = BaseFingerprint::of(&params, &vocab);
        let ckpt = Checkpoint {
            config,
            frozen_depth: config.num_layers,
            task_layers: 0,
            task: None,
            vocab,
            base,
            provenance: Provenance::base(seed),
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn is_base(&self) -> bool {
        self.task.is_none()
    }

    /// Layers stored in this checkpoint.
    pub fn depth(&self) -> usize {
        self.frozen_depth + self.task_layers
    }

    pub fn task(&self) -> Result<&TaskSpec> {
        self.task.as_ref().ok_or_else(|| Error::input("base checkpoint has no task"))
    }

    pub fn task_id(&self) -> &str {
        self.task.as_ref().map_or("<base>", |t| t.id.as_str())
    }

    pub fn head_kind(&self) -> Option<HeadKind> {
        self.task.as_ref().map(|t| t.head)
    }

    /// Checks structure, shapes, trainable flags and the frozen prefix
    /// against the base fingerprint.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let bad = |detail: String| Err(Error::Format(format!("`{}`: {detail}", self.task_id())));
        if self.vocab.len() != cfg.vocab_size {
            return bad(format!("vocabulary of {} for vocab_size {}", self.vocab.len(), cfg.vocab_size));
        }
        if self.depth() > cfg.num_layers {
            return bad(format!("{} layers exceed num_layers {}", self.depth(), cfg.num_layers));
        }
        if self.is_base() && (self.task_layers != 0 || self.frozen_depth != cfg.num_layers) {
            return bad("base checkpoint must hold all layers frozen".into());
        }
        if let Some(task) = &self.task {
            task.validate()?;
        }

        let mut expected: Vec<String> = EMBEDDING_PARAMS.iter().map(|s| s.to_string()).collect();
        for i in 1..=self.depth() {
            expected.extend(LAYER_COMPONENTS.iter().map(|c| layer_param(i, c)));
        }
        expected.extend(POOLER_PARAMS.iter().map(|s| s.to_string()));
        if !self.is_base() {
            expected.extend(HEAD_PARAMS.iter().map(|s| s.to_string()));
        }
        if self.params.len() != expected.len() {
            let extra: Vec<_> = self.params.names().filter(|n| !expected.iter().any(|e| e == n)).collect();
            return bad(format!("expected {} tensors, found {} (unexpected: {extra:?})", expected.len(), self.params.len()));
        }
        let head = self.head_kind();
        for name in &expected {
            let p = self.params.require(name)?;
            let shape = cfg.param_shape(name, head).expect("canonical");
            if p.value.shape() != shape.as_slice() {
                return bad(format!("`{name}` has shape {:?}, expected {shape:?}", p.value.shape()));
            }
            if !p.value.is_finite() {
                return bad(format!("`{name}` holds non-finite values"));
            }
        }

        if self.is_base() {
            if self.params.trainable_names().next().is_some() {
                return bad("base checkpoint has trainable tensors".into());
            }
        } else {
            let frozen = self.params.frozen_depth()?;
            if frozen != self.frozen_depth {
                return bad(format!("trainable flags give frozen depth {frozen}, manifest says {}", self.frozen_depth));
            }
        }
        if let Some(name) = self.frozen_mismatch() {
            return Err(Error::FingerprintMismatch { task: self.task_id().to_string(), tensor: name });
        }
        Ok(())
    }

    /// First frozen tensor whose hash differs from the base fingerprint.
    pub fn frozen_mismatch(&self) -> Option<String> {
        self.frozen_names().into_iter().find(|name| {
            let actual = self.params.get(name).map(Tensor::content_hash);
            actual.as_ref() != self.base.tensors.get(name)
        })
    }

    /// Names of the tensors that must equal the base: embeddings (when
    /// `f >= 1`) and layers `1..=f`.
    pub fn frozen_names(&self) -> Vec<String> {
        let f = self.frozen_depth;
        let mut names = Vec::new();
        if f >= 1 {
            names.extend(EMBEDDING_PARAMS.iter().map(|s| s.to_string()));
        }
        for i in 1..=f {
            names.extend(LAYER_COMPONENTS.iter().map(|c| layer_param(i, c)));
        }
        names
    }

    /// Encodes raw text with this checkpoint's vocabulary.
    pub fn encode_text(&self, text_a: &str, text_b: Option<&str>) -> Vec<u32> {
        self.vocab.encode(text_a, text_b, self.config.max_seq_len)
    }

    /// Task outputs `[B, k]` for a batch.
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        let head = self.task()?.head;
        let mut tape = Tape::inference();
        let acts = encoder::forward(&mut tape, &self.params, &self.config, batch, None)?;
        let out = encoder::pool_and_head(&mut tape, &self.params, acts, head)?;
        Ok(tape.value(out).clone())
    }

    /// One output row per sequence, batched `batch_size` at a time.
    pub fn predict<S: AsRef<[u32]>>(&self, seqs: &[S], batch_size: usize) -> Result<Vec<Vec<f32>>> {
        let mut rows = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(batch_size.max(1)) {
            let out = self.logits(&Batch::new(chunk)?)?;
            rows.extend(out.data().chunks(out.last_dim()).map(<[f32]>::to_vec));
        }
        Ok(rows)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut index = Vec::with_capacity(self.params.len());
        let mut payload: Vec<u8> = Vec::new();
        for (name, p) in self.params.iter() {
            payload.resize(align_up(payload.len()), 0);
            index.push(IndexEntry {
                name: name.to_string(),
                shape: p.value.shape().to_vec(),
                offset: payload.len() as u64,
                sha256: p.value.content_hash(),
            });
            payload.extend(p.value.to_le_bytes());
        }
        let manifest = Manifest {
            config: self.config,
            frozen_depth: self.frozen_depth,
            task_layers: self.task_layers,
            task: self.task.clone(),
            vocab: self.vocab.tokens().to_vec(),
            base_fingerprint: self.base.clone(),
            provenance: self.provenance.clone(),
            payload_len: payload.len() as u64,
            payload_sha256: sha256_hex(&payload),
            tensors: index,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + ALIGN + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.resize(align_up(out.len()), 0);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt_err = |m: String| Error::Format(m);
        if bytes.len() < HEADER_LEN {
            return Err(fmt_err(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt_err("bad magic, not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(fmt_err(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let manifest_end = usize::try_from(manifest_len)
            .ok()
            .and_then(|n| n.checked_add(HEADER_LEN))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| fmt_err("truncated manifest".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[HEADER_LEN..manifest_end]).map_err(|e| fmt_err(format!("manifest: {e}")))?;

        let start = align_up(manifest_end);
        if bytes[manifest_end..start.min(bytes.len())].iter().any(|&b| b != 0) {
            return Err(Error::Integrity("non-zero manifest padding".into()));
        }
        let payload_len = manifest.payload_len as usize;
        let expected_len = start.checked_add(payload_len).ok_or_else(|| fmt_err("payload length overflow".into()))?;
        if bytes.len() < expected_len {
            return Err(fmt_err(format!("truncated payload: {} of {expected_len} bytes", bytes.len())));
        }
        if bytes.len() > expected_len {
            return Err(Error::Integrity(format!("{} trailing bytes after payload", bytes.len() - expected_len)));
        }
        let payload = &bytes[start..];
        if sha256_hex(payload) != manifest.payload_sha256 {
            return Err(Error::Integrity("payload hash mismatch".into()));
        }

        let mut params = ParamStore::default();
        let mut cursor = 0usize;
        for entry in &manifest.tensors {
            let offset = entry.offset as usize;
            let count: usize = entry.shape.iter().product();
            let end = offset.checked_add(count * 4).unwrap_or(usize::MAX);
            if offset % ALIGN != 0 || offset < cursor || end > payload.len() {
                return Err(Error::Integrity(format!("index entry `{}` does not fit the payload", entry.name)));
            }
            if params.get(&entry.name).is_some() {
                return Err(Error::Integrity(format!("tensor `{}` listed twice", entry.name)));
            }
            let data = payload[offset..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(entry.shape.clone(), data).map_err(|e| Error::Integrity(e.to_string()))?;
            if t.content_hash() != entry.sha256 {
                return Err(Error::Integrity(format!("hash mismatch for tensor `{}`", entry.name)));
            }
            params.insert(&entry.name, t, true);
            cursor = end;
        }

        let vocab = Vocab::from_tokens(manifest.vocab)?;
        let mut ckpt = Checkpoint {
            config: manifest.config,
            frozen_depth: manifest.frozen_depth,
            task_layers: manifest.task_layers,
            task: manifest.task,
            vocab,
            base: manifest.base_fingerprint,
            provenance: manifest.provenance,
            params,
        };
        ckpt.apply_trainable_flags()?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Base checkpoints are fully frozen; task checkpoints freeze their
    /// prefix.
    pub(crate) fn apply_trainable_flags(&mut self) -> Result<()> {
        if self.is_base() {
            self.params.set_all_trainable(false);
            Ok(())
        } else {
            self.params.set_frozen_depth(self.frozen_depth)
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.write(path)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read(path)
}

/// True if `bytes` start with the checkpoint magic.
pub fn is_checkpoint(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: EncoderConfig,
    frozen_depth: usize,
    task_layers: usize,
    task: Option<TaskSpec>,
    vocab: Vec<String>,
    base_fingerprint: BaseFingerprint,
    provenance: Provenance,
    payload_len: u64,
    payload_sha256: String,
    tensors: Vec<IndexEntry>,
}
