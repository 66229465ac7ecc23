//! Merging single-task checkpoints into one model with a shared frozen
//! prefix.
//!
//! The shared stack holds the embeddings and layers `1..=F`, `F` being the
//! largest frozen depth among members. Each task branch taps the shared
//! stack after its own frozen depth and runs its task-specific layers,
//! pooler and head with the same kernels a standalone model uses, so merged
//! outputs are bit-identical to standalone ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{BaseFingerprint, Checkpoint};
use crate::data::{TaskSpec, Vocab};
use crate::encoder::{self, Batch, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::{Tape, Tensor};

/// Frozen depth and task-specific layer count of one task model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShape {
    pub frozen_depth: usize,
    pub task_layers: usize,
}

/// Total transformer layers of a multi-task deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overhead {
    /// Layers computed once for all tasks.
    pub shared: usize,
    /// Sum of per-task layers not shared.
    pub task_specific: usize,
    /// Reference deployment size (full fine-tuning of every task).
    pub reference: usize,
}

impl Overhead {
    pub fn layers(&self) -> usize {
        self.shared + self.task_specific
    }

    /// Layers as a percentage of the reference; 0 when the reference is 0.
    pub fn percent(&self) -> f64 {
        if self.reference == 0 {
            0.0
        } else {
            100.0 * self.layers() as f64 / self.reference as f64
        }
    }
}

impl fmt::Display for Overhead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:.1}%)", self.layers(), self.percent())
    }
}

/// Layer count of serving `tasks`. With sharing, the frozen prefixes
/// collapse to the deepest one; without, every model is counted in full.
/// The reference is `reference_per_task` layers for each task.
pub fn overhead(tasks: &[TaskShape], shared: bool, reference_per_task: usize) -> Overhead {
    let task_sum: usize = tasks.iter().map(|t| t.task_layers).sum();
    let (shared_layers, task_specific) = if shared {
        (tasks.iter().map(|t| t.frozen_depth).max().unwrap_or(0), task_sum)
    } else {
        (0, tasks.iter().map(|t| t.frozen_depth).sum::<usize>() + task_sum)
    };
    Overhead { shared: shared_layers, task_specific, reference: reference_per_task * tasks.len() }
}

/// Checks that `ckpts` come from one base and can be merged.
pub fn validate_mergeable(ckpts: &[&Checkpoint]) -> Result<()> {
    let first = ckpts.first().ok_or_else(|| Error::input("nothing to merge"))?;
    let mut seen = BTreeSet::new();
    for c in ckpts {
        let task = c.task()?;
        if !seen.insert(task.id.clone()) {
            return Err(Error::DuplicateTask(task.id.clone()));
        }
        if c.config != first.config {
            return Err(Error::ConfigMismatch { task: task.id.clone(), detail: format!("{:?} vs {:?}", c.config, first.config) });
        }
        if c.vocab != first.vocab {
            return Err(Error::ConfigMismatch { task: task.id.clone(), detail: "vocabulary differs".into() });
        }
        if c.base != first.base {
            let tensor = c
                .base
                .tensors
                .iter()
                .find(|(name, hash)| first.base.tensors.get(*name) != Some(*hash))
                .map_or_else(|| "<vocabulary>".to_string(), |(name, _)| name.clone());
            return Err(Error::FingerprintMismatch { task: task.id.clone(), tensor });
        }
        if let Some(tensor) = c.frozen_mismatch() {
            return Err(Error::FingerprintMismatch { task: task.id.clone(), tensor });
        }
    }
    Ok(())
}

/// One task's private part of the merged model.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub task: TaskSpec,
    /// Shared-stack depth this branch reads from.
    pub depth: usize,
    pub task_layers: usize,
    /// Layers `depth+1..=depth+task_layers`, pooler, head, and the
    /// embeddings when `depth == 0`.
    pub params: ParamStore,
    /// Content hash of the source checkpoint.
    pub source: String,
}

impl Branch {
    pub fn shape(&self) -> TaskShape {
        TaskShape { frozen_depth: self.depth, task_layers: self.task_layers }
    }
}

/// Outputs of one merged inference call.
#[derive(Debug, Clone)]
pub struct Inference {
    pub outputs: BTreeMap<String, Tensor>,
    /// Transformer layers actually executed.
    pub layers_executed: usize,
}

/// Shared frozen stack plus per-task branches.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedModel {
    config: EncoderConfig,
    vocab: Vocab,
    base: BaseFingerprint,
    shared: ParamStore,
    branches: BTreeMap<String, Branch>,
}

fn branch_of(c: &Checkpoint) -> Result<Branch> {
    let f = c.frozen_depth;
    let params = c.params.filtered(|g| match g {
        ParamGroup::Embeddings => f == 0,
        ParamGroup::Layer(i) => i > f,
        ParamGroup::Pooler | ParamGroup::Head => true,
    });
    Ok(Branch { task: c.task()?.clone(), depth: f, task_layers: c.task_layers, params, source: c.content_hash()? })
}

impl MergedModel {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn base(&self) -> &BaseFingerprint {
        &self.base
    }

    /// Depth of the shared stack.
    pub fn shared_depth(&self) -> usize {
        self.shared.layer_count()
    }

    pub fn shared_params(&self) -> &ParamStore {
        &self.shared
    }

    pub fn branches(&self) -> &BTreeMap<String, Branch> {
        &self.branches
    }

    pub fn branch(&self, task: &str) -> Result<&Branch> {
        self.branches.get(task).ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.branches.keys().map(String::as_str)
    }

    /// Overhead of the whole merged model against full fine-tuning.
    pub fn overhead(&self) -> Overhead {
        let shapes: Vec<TaskShape> = self.branches.values().map(Branch::shape).collect();
        overhead(&shapes, true, self.config.num_layers)
    }

    /// Layers executed when serving `tasks` together.
    pub fn layers_for(&self, tasks: &[&str]) -> Result<usize> {
        let shapes = tasks.iter().map(|t| self.branch(t).map(Branch::shape)).collect::<Result<Vec<_>>>()?;
        let unique: BTreeMap<&str, TaskShape> = tasks.iter().copied().zip(shapes).collect();
        let shapes: Vec<TaskShape> = unique.into_values().collect();
        Ok(overhead(&shapes, true, 0).layers())
    }

    /// Runs the shared stack once up to the deepest requested branch point
    /// and every requested branch on top of it.
    pub fn infer(&self, batch: &Batch, tasks: &[&str]) -> Result<Inference> {
        let requested: BTreeSet<&str> = tasks.iter().copied().collect();
        let branches = requested.iter().map(|t| self.branch(t)).collect::<Result<Vec<_>>>()?;
        let mut outputs = BTreeMap::new();
        if branches.is_empty() {
            return Ok(Inference { outputs, layers_executed: 0 });
        }
        let cfg = &self.config;
        let mut tape = Tape::inference();
        let mut layers_executed = 0;

        let top = branches.iter().map(|b| b.depth).max().unwrap_or(0);
        let mut taps = BTreeMap::new();
        if top >= 1 {
            let mut x = encoder::embed(&mut tape, &self.shared, cfg, batch)?;
            for i in 1..=top {
                x = encoder::encoder_layer(&mut tape, &self.shared, cfg, i, x, batch)?;
                layers_executed += 1;
                if branches.iter().any(|b| b.depth == i) {
                    taps.insert(i, x);
                }
            }
        }
        for b in branches {
            let start = match b.depth {
                0 => encoder::embed(&mut tape, &b.params, cfg, batch)?,
                d => taps[&d],
            };
            let last = b.depth + b.task_layers;
            let acts = encoder::run_layers(&mut tape, &b.params, cfg, start, batch, b.depth + 1..=last)?;
            layers_executed += b.task_layers;
            let out = encoder::pool_and_head(&mut tape, &b.params, acts, b.task.head)?;
            outputs.insert(b.task.id.clone(), tape.value(out).clone());
        }
        Ok(Inference { outputs, layers_executed })
    }

    /// Replaces one task's branch. The shared stack is extended
    /// from the new checkpoint when its frozen depth exceeds the current
    /// one, and trimmed to the deepest remaining branch point otherwise.
    pub fn update_task(&self, task: &str, ckpt: &Checkpoint) -> Result<MergedModel> {
        self.branch(task)?;
        let spec = ckpt.task()?;
        if spec.id != task {
            return Err(Error::input(format!("checkpoint is for `{}`, not `{task}`", spec.id)));
        }
        ckpt.validate()?;
        if ckpt.config != self.config {
            return Err(Error::ConfigMismatch { task: task.to_string(), detail: "encoder config differs".into() });
        }
        if ckpt.vocab != self.vocab {
            return Err(Error::ConfigMismatch { task: task.to_string(), detail: "vocabulary differs".into() });
        }
        if ckpt.base != self.base {
            let tensor = ckpt
                .base
                .tensors
                .iter()
                .find(|(name, hash)| self.base.tensors.get(*name) != Some(*hash))
                .map_or_else(|| "<vocabulary>".to_string(), |(name, _)| name.clone());
            return Err(Error::FingerprintMismatch { task: task.to_string(), tensor });
        }

        let mut branches = self.branches.clone();
        branches.insert(task.to_string(), branch_of(ckpt)?);
        let top = branches.values().map(|b| b.depth).max().unwrap_or(0);
        let current = self.shared_depth();
        let mut shared = self.shared.filtered(|g| !matches!(g, ParamGroup::Layer(i) if i > top));
        if top > current || (top >= 1 && shared.is_empty()) {
            let extension = ckpt.params.filtered(|g| match g {
                ParamGroup::Embeddings => true,
                ParamGroup::Layer(i) => i <= top,
                _ => false,
            });
            for (name, p) in extension.iter() {
                if shared.get(name).is_none() {
                    shared.insert(name, p.value.clone(), false);
                }
            }
        }
        if top == 0 {
            shared = ParamStore::default();
        }
        Ok(MergedModel { config: self.config, vocab: self.vocab.clone(), base: self.base.clone(), shared, branches })
    }
}

/// Merges validated checkpoints. The result does not depend on their order.
pub fn merge(ckpts: &[&Checkpoint]) -> Result<MergedModel> {
    validate_mergeable(ckpts)?;
    let first = ckpts[0];
    let deepest = ckpts.iter().max_by_key(|c| c.frozen_depth).expect("non-empty");
    let top = deepest.frozen_depth;
    let mut shared = ParamStore::default();
    if top >= 1 {
        shared = deepest.params.filtered(|g| match g {
            ParamGroup::Embeddings => true,
            ParamGroup::Layer(i) => i <= top,
            _ => false,
        });
        shared.set_all_trainable(false);
    }
    let mut branches = BTreeMap::new();
    for c in ckpts {
        let b = branch_of(c)?;
        branches.insert(b.task.id.clone(), b);
    }
    Ok(MergedModel { config: first.config, vocab: first.vocab.clone(), base: first.base.clone(), shared, branches })
}

/// A merged model that can be read concurrently and swapped atomically.
/// Readers hold an `Arc` snapshot for the whole request, so they see either
/// the old or the new model, never a mix.
#[derive(Debug)]
pub struct LiveModel {
    current: RwLock<Arc<MergedModel>>,
    update: Mutex<()>,
}

impl LiveModel {
    pub fn new(model: MergedModel) -> Self {
        LiveModel { current: RwLock::new(Arc::new(model)), update: Mutex::new(()) }
    }

    pub fn snapshot(&self) -> Arc<MergedModel> {
        self.current.read().expect("model lock poisoned").clone()
    }

    /// Builds the updated model off-lock, then publishes it.
    pub fn swap(&self, task: &str, ckpt: &Checkpoint) -> Result<()> {
        let _guard = self.update.lock().expect("update lock poisoned");
        let next = self.snapshot().update_task(task, ckpt)?;
        *self.current.write().expect("model lock poisoned") = Arc::new(next);
        Ok(())
    }
}

pub const MERGED_FORMAT: &str = "layerfork-merged/1";

/// One member checkpoint of a merged-model file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub task: String,
    /// Relative paths resolve against the manifest's directory.
    pub checkpoint: PathBuf,
    /// SHA-256 of the checkpoint file.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedManifest {
    pub format: String,
    pub members: Vec<Member>,
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes a merged-model manifest listing `checkpoints` (validated as
/// mergeable first).
pub fn write_merged(path: &Path, checkpoints: &[PathBuf]) -> Result<MergedManifest> {
    let loaded = checkpoints.iter().map(|p| Checkpoint::read(p)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Checkpoint> = loaded.iter().collect();
    validate_mergeable(&refs)?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let dir = std::fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
    let mut members = Vec::new();
    for (p, c) in checkpoints.iter().zip(&loaded) {
        let abs = std::fs::canonicalize(p).map_err(|e| Error::io(p, e))?;
        let stored = abs.strip_prefix(&dir).map(Path::to_path_buf).unwrap_or(abs.clone());
        members.push(Member { task: c.task()?.id.clone(), checkpoint: stored, sha256: file_sha256(&abs)? });
    }
    members.sort_by(|a, b| a.task.cmp(&b.task));
    let manifest = MergedManifest { format: MERGED_FORMAT.to_string(), members };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// Reads a merged-model manifest, verifies member hashes and merges.
pub fn read_merged(path: &Path) -> Result<(MergedModel, MergedManifest)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: MergedManifest = serde_json::from_str(&text)?;
    if manifest.format != MERGED_FORMAT {
        return Err(Error::Format(format!("merged format `{}`, expected `{MERGED_FORMAT}`", manifest.format)));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut ckpts = Vec::new();
    for m in &manifest.members {
        let p = dir.join(&m.checkpoint);
        if file_sha256(&p)? != m.sha256 {
            return Err(Error::Integrity(format!("member `{}` does not match its recorded hash", m.task)));
        }
        let c = Checkpoint::read(&p)?;
        if c.task()?.id != m.task {
            return Err(Error::Integrity(format!("member `{}` holds task `{}`", m.task, c.task_id())));
        }
        ckpts.push(c);
    }
    let refs: Vec<&Checkpoint> = ckpts.iter().collect();
    Ok((merge(&refs)?, manifest))
}
