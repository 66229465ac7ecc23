//! A model file on disk: one task checkpoint or a merged manifest.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use layerfork::checkpoint::{is_checkpoint, Checkpoint};
use layerfork::data::TaskSpec;
use layerfork::encoder::Batch;
use layerfork::merge::{merge, read_merged, MergedModel};

pub enum Model {
    Single(Checkpoint),
    Merged(MergedModel),
}

/// Output rows per task, one row per input sequence.
pub type TaskOutputs = BTreeMap<String, Vec<Vec<f32>>>;

impl Model {
    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        if is_checkpoint(&bytes) {
            let ckpt = Checkpoint::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))?;
            ckpt.validate()?;
            Ok(Model::Single(ckpt))
        } else {
            let (m, _) = read_merged(path).with_context(|| format!("loading {}", path.display()))?;
            Ok(Model::Merged(m))
        }
    }

    pub fn task_ids(&self) -> Vec<String> {
        match self {
            Model::Single(c) => c.task.iter().map(|t| t.id.clone()).collect(),
            Model::Merged(m) => m.task_ids().map(str::to_string).collect(),
        }
    }

    pub fn spec(&self, task: &str) -> Result<&TaskSpec> {
        match self {
            Model::Single(c) => match &c.task {
                Some(t) if t.id == task => Ok(t),
                Some(t) => bail!("checkpoint holds task `{}`, not `{task}`", t.id),
                None => bail!("a base checkpoint has no task head"),
            },
            Model::Merged(m) => Ok(&m.branch(task)?.task),
        }
    }

    pub fn encode(&self, text_a: &str, text_b: Option<&str>) -> Vec<u32> {
        match self {
            Model::Single(c) => c.encode_text(text_a, text_b),
            Model::Merged(m) => m.vocab().encode(text_a, text_b, m.config().max_seq_len),
        }
    }

    /// Runs `tasks` (all tasks when empty) over `seqs`.
    pub fn outputs(&self, seqs: &[Vec<u32>], tasks: &[String], batch_size: usize) -> Result<TaskOutputs> {
        let tasks = if tasks.is_empty() { self.task_ids() } else { tasks.to_vec() };
        if tasks.is_empty() {
            bail!("model has no task heads");
        }
        for t in &tasks {
            self.spec(t)?;
        }
        let mut out: TaskOutputs = tasks.iter().map(|t| (t.clone(), Vec::new())).collect();
        for chunk in seqs.chunks(batch_size.max(1)) {
            let batch = Batch::new(chunk)?;
            match self {
                Model::Single(c) => {
                    let logits = c.logits(&batch)?;
                    let rows = out.get_mut(&tasks[0]).expect("requested task");
                    rows.extend(logits.data().chunks(logits.last_dim()).map(<[f32]>::to_vec));
                }
                Model::Merged(m) => {
                    let ids: Vec<&str> = tasks.iter().map(String::as_str).collect();
                    let inf = m.infer(&batch, &ids)?;
                    for (task, t) in inf.outputs {
                        let rows = out.get_mut(&task).expect("requested task");
                        rows.extend(t.data().chunks(t.last_dim()).map(<[f32]>::to_vec));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn into_merged(self) -> Result<MergedModel> {
        match self {
            Model::Single(c) => {
                c.task()?;
                Ok(merge(&[&c])?)
            }
            Model::Merged(m) => Ok(m),
        }
    }
}
