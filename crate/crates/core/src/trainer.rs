//! Partial fine-tuning, seeded trials and the layer-count search.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Provenance, Stage};
use crate::data::{Encoded, HeadKind, Label, TaskData, TaskSpec};
use crate::encoder::{self, Batch, EncoderConfig};
use crate::error::{Error, Result};
use crate::metrics;
use crate::params::ParamStore;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

/// Optimizer and schedule settings. Defaults follow the BERT recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { adam: AdamConfig::default(), batch_size: 32, epochs: 3, seed: 0, max_steps: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr >= 0.0) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Inclusive range of fine-tuned layer counts considered by the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRange {
    pub min: usize,
    pub max: usize,
}

impl SearchRange {
    pub fn new(min: usize, max: usize, num_layers: usize) -> Result<Self> {
        if min < 1 || min > max || max > num_layers {
            return Err(Error::config(format!("search range [{min}, {max}] invalid for {num_layers} layers")));
        }
        Ok(SearchRange { min, max })
    }

    pub fn layers(&self) -> std::ops::RangeInclusive<usize> {
        self.min..=self.max
    }
}

/// Picks the best layer count in `range`; ties go to the smallest count.
pub fn search_layer_count(scores: &BTreeMap<usize, f64>, range: SearchRange) -> Result<usize> {
    if range.min < 1 || range.min > range.max {
        return Err(Error::config(format!("empty search range [{}, {}]", range.min, range.max)));
    }
    let mut best: Option<(usize, f64)> = None;
    for l in range.layers() {
        let s = *scores.get(&l).ok_or_else(|| Error::input(format!("no score for L = {l}")))?;
        if !s.is_finite() {
            return Err(Error::input(format!("score for L = {l} is not finite")));
        }
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((l, s));
        }
    }
    Ok(best.expect("non-empty range").0)
}

/// Result of one seeded trial.
#[derive(Debug, Clone)]
pub struct Trial<T> {
    pub seed: u64,
    pub score: f64,
    pub value: T,
}

/// Runs `job` once per seed (in parallel) and keeps the best dev score;
/// ties go to the lowest seed.
pub fn run_seeded_trials<T, F>(seeds: &[u64], job: F) -> Result<Trial<T>>
where
    T: Send,
    F: Fn(u64) -> Result<(T, f64)> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::config("at least one trial is required"));
    }
    let results: Vec<Result<Trial<T>>> =
        seeds.par_iter().map(|&seed| job(seed).map(|(value, score)| Trial { seed, score, value })).collect();
    let mut best: Option<Trial<T>> = None;
    for r in results {
        let t = r?;
        let better = match &best {
            None => true,
            Some(b) => t.score > b.score || (t.score == b.score && t.seed < b.seed),
        };
        if better {
            best = Some(t);
        }
    }
    Ok(best.expect("non-empty"))
}

/// `n` consecutive seeds starting at `first`.
pub fn trial_seeds(first: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| first + i).collect()
}

pub(crate) fn check_data(spec: &TaskSpec, data: &TaskData) -> Result<()> {
    spec.validate()?;
    if data.train.is_empty() {
        return Err(Error::Task { task: spec.id.clone(), detail: "empty train split".into() });
    }
    if data.dev.is_empty() {
        return Err(Error::Task { task: spec.id.clone(), detail: "empty dev split".into() });
    }
    if let Some(ex) = data.train.iter().chain(&data.dev).find(|e| !e.label.fits(spec.head)) {
        return Err(Error::Task { task: spec.id.clone(), detail: format!("label {:?} does not fit the head", ex.label) });
    }
    Ok(())
}

/// Task outputs for every example, `batch_size` at a time.
pub fn predict_params(
    params: &ParamStore,
    cfg: &EncoderConfig,
    head: HeadKind,
    examples: &[Encoded],
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    let mut rows = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let ids: Vec<&[u32]> = chunk.iter().map(|e| e.ids.as_slice()).collect();
        let batch = Batch::new(&ids)?;
        let mut tape = Tape::inference();
        let acts = encoder::forward(&mut tape, params, cfg, &batch, None)?;
        let out = encoder::pool_and_head(&mut tape, params, acts, head)?;
        let out = tape.value(out);
        rows.extend(out.data().chunks(out.last_dim()).map(<[f32]>::to_vec));
    }
    Ok(rows)
}

/// Dev-metric score of `params` on `examples`.
pub fn evaluate_params(
    params: &ParamStore,
    cfg: &EncoderConfig,
    spec: &TaskSpec,
    examples: &[Encoded],
    batch_size: usize,
) -> Result<f64> {
    let outputs = predict_params(params, cfg, spec.head, examples, batch_size)?;
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    metrics::evaluate(spec, &outputs, &labels)
}

/// Evaluates a task checkpoint on encoded examples.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, examples: &[Encoded], batch_size: usize) -> Result<f64> {
    evaluate_params(&ckpt.params, &ckpt.config, ckpt.task()?, examples, batch_size)
}

/// Supervised loss on gold labels: cross-entropy or mean squared error.
pub fn supervised_loss(tape: &mut Tape, outputs: Var, gold: &[Label], head: HeadKind) -> Result<Var> {
    match head {
        HeadKind::Classification { .. } => {
            let targets = gold
                .iter()
                .map(|l| l.class().ok_or_else(|| Error::input("regression label for a classification head")))
                .collect::<Result<Vec<_>>>()?;
            tape.cross_entropy(outputs, &targets)
        }
        HeadKind::Regression => {
            let scores = gold
                .iter()
                .map(|l| l.score().ok_or_else(|| Error::input("class label for a regression head")))
                .collect::<Result<Vec<_>>>()?;
            let target = tape.constant(Tensor::new(vec![scores.len(), 1], scores)?);
            tape.mse(outputs, target)
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub dev_score: f64,
    pub steps: u64,
    /// Epoch (1-based) whose weights were kept; 0 when no step ran.
    pub best_epoch: usize,
}

/// Per-step callback: `(step, params after the step)`.
pub type StepObserver<'a> = &'a mut dyn FnMut(u64, &ParamStore);

/// Shared mini-batch loop. `loss_fn` receives the tape, the model outputs
/// and the indices of the training examples in the batch. Dev is scored
/// after every epoch and the best epoch's weights are kept.
pub(crate) fn train_loop(
    mut params: ParamStore,
    model_cfg: &EncoderConfig,
    spec: &TaskSpec,
    data: &TaskData,
    cfg: &TrainConfig,
    loss_fn: &mut dyn FnMut(&mut Tape, Var, &[usize]) -> Result<Var>,
    mut observer: Option<StepObserver<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(spec, data)?;
    let eval_batch = cfg.batch_size.max(64);
    if cfg.max_steps == Some(0) {
        let dev_score = evaluate_params(&params, model_cfg, spec, &data.dev, eval_batch)?;
        return Ok(TrainOutcome { params, dev_score, steps: 0, best_epoch: 0 });
    }
    let mut adam = AdamState::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut steps = 0u64;
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let budget = cfg.max_steps.map(|m| m as u64);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            if budget.is_some_and(|b| steps >= b) {
                break;
            }
            let ids: Vec<&[u32]> = idx.iter().map(|&i| data.train[i].ids.as_slice()).collect();
            let batch = Batch::new(&ids)?;
            let mut tape = Tape::new();
            let acts = encoder::forward(&mut tape, &params, model_cfg, &batch, None)?;
            let out = encoder::pool_and_head(&mut tape, &params, acts, spec.head)?;
            let loss = loss_fn(&mut tape, out, idx)?;
            let grads = tape.backward(loss)?;
            adam.update(&mut params, &grads)?;
            steps += 1;
            if let Some(obs) = observer.as_mut() {
                obs(steps, &params);
            }
        }
        let score = evaluate_params(&params, model_cfg, spec, &data.dev, eval_batch)?;
        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, epoch, params.clone()));
        }
        if budget.is_some_and(|b| steps >= b) {
            break;
        }
    }
    let (dev_score, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome { params, dev_score, steps, best_epoch })
}

/// Fine-tunes the top `layers` layers of `base` on one task.
pub fn partial_finetune(
    base: &Checkpoint,
    task: &TaskSpec,
    layers: usize,
    cfg: &TrainConfig,
    data: &TaskData,
) -> Result<(Checkpoint, f64)> {
    partial_finetune_observed(base, task, layers, cfg, data, None)
}

/// [`partial_finetune`] with a per-step observer.
pub fn partial_finetune_observed(
    base: &Checkpoint,
    task: &TaskSpec,
    layers: usize,
    cfg: &TrainConfig,
    data: &TaskData,
    observer: Option<StepObserver<'_>>,
) -> Result<(Checkpoint, f64)> {
    if !base.is_base() {
        return Err(Error::input(format!("`{}` is a task checkpoint, expected a base", base.task_id())));
    }
    let n = base.config.num_layers;
    if layers > n {
        return Err(Error::config(format!("cannot fine-tune {layers} of {n} layers")));
    }
    let f = n - layers;
    let mut params = base.params.clone();
    encoder::init_head(&mut params, &base.config, task.head, cfg.seed);
    params.set_frozen_depth(f)?;

    let head = task.head;
    let train = &data.train;
    let mut loss_fn = |tape: &mut Tape, out: Var, idx: &[usize]| {
        let gold: Vec<Label> = idx.iter().map(|&i| train[i].label).collect();
        supervised_loss(tape, out, &gold, head)
    };
    let outcome = train_loop(params, &base.config, task, data, cfg, &mut loss_fn, observer)?;

    let ckpt = Checkpoint {
        config: base.config,
        frozen_depth: f,
        task_layers: layers,
        task: Some(task.clone()),
        vocab: base.vocab.clone(),
        base: base.base.clone(),
        provenance: Provenance {
            stage: Stage::FineTune,
            parent: Some(base.content_hash()?),
            seed: Some(cfg.seed),
            steps: outcome.steps,
            dev_score: Some(outcome.dev_score),
        },
        params: outcome.params,
    };
    ckpt.validate()?;
    Ok((ckpt, outcome.dev_score))
}

/// Layer count for a job: fixed, or searched over a range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerChoice {
    Fixed { layers: usize },
    Search { search: SearchRange },
}

/// Training job manifest. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    /// Task directory with `task.json`, `train.tsv` and `dev.tsv`.
    pub task: PathBuf,
    pub base: PathBuf,
    #[serde(flatten)]
    pub layers: LayerChoice,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    pub output: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_trials() -> usize {
    5
}

impl TrainJob {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut job: TrainJob = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut job.task, &mut job.base, &mut job.output] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(job)
    }

    /// Explicit seeds, or `trials` seeds starting at the config seed.
    pub fn seed_list(&self) -> Result<Vec<u64>> {
        let seeds = match &self.seeds {
            Some(s) => s.clone(),
            None => trial_seeds(self.train.seed, self.trials),
        };
        if seeds.is_empty() {
            return Err(Error::config("job has no seeds"));
        }
        Ok(seeds)
    }
}

/// Outcome of a (possibly searched) training job.
#[derive(Debug, Clone)]
pub struct JobResult {
    pub checkpoint: Checkpoint,
    pub layers: usize,
    pub seed: u64,
    pub dev_score: f64,
    /// Best score per layer count considered.
    pub scores: BTreeMap<usize, f64>,
}

/// Runs seeded trials for each candidate layer count and keeps the winner.
pub fn run_job(
    base: &Checkpoint,
    task: &TaskSpec,
    data: &TaskData,
    choice: LayerChoice,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<JobResult> {
    let candidates: Vec<usize> = match choice {
        LayerChoice::Fixed { layers } => vec![layers],
        LayerChoice::Search { search } => {
            SearchRange::new(search.min, search.max, base.config.num_layers)?;
            search.layers().collect()
        }
    };
    let mut scores = BTreeMap::new();
    let mut winners = BTreeMap::new();
    for &l in &candidates {
        let trial = run_seeded_trials(seeds, |seed| {
            let cfg = TrainConfig { seed, ..*cfg };
            partial_finetune(base, task, l, &cfg, data)
        })?;
        scores.insert(l, trial.score);
        winners.insert(l, trial);
    }
    let layers = match choice {
        LayerChoice::Fixed { layers } => layers,
        LayerChoice::Search { search } => search_layer_count(&scores, search)?,
    };
    let trial = winners.remove(&layers).expect("trained above");
    Ok(JobResult { checkpoint: trial.value, layers, seed: trial.seed, dev_score: trial.score, scores })
}
