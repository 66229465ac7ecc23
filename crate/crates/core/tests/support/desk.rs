//! Desk-scale training runs on synthetic tasks, shared by the training
//! tests and the acceptance gate.

use layerfork::checkpoint::Checkpoint;
use layerfork::data::{build_vocab, synth_task, SynthKind, SynthSizes, TaskData, TaskSpec};
use layerfork::distill::{build_base_student, build_student, distill_train, distill_train_observed, StudentPlan};
use layerfork::encoder::EncoderConfig;
use layerfork::params::{ParamGroup, ParamStore};
use layerfork::tensor::AdamConfig;
use layerfork::trainer::{partial_finetune, partial_finetune_observed, TrainConfig};

pub const BASE_SEED: u64 = 11;
pub const LR: f32 = 1e-3;

pub fn setup(kind: SynthKind, data_seed: u64, sizes: SynthSizes) -> (Checkpoint, TaskSpec, TaskData) {
    let (spec, train, dev) = synth_task(kind, 1, data_seed, sizes).unwrap();
    let vocab = build_vocab(train.texts(), 1000).unwrap();
    let cfg = EncoderConfig::desk(vocab.len());
    let data = TaskData::encode(&train, &dev, &vocab, cfg.max_seq_len);
    (Checkpoint::new_base(cfg, vocab, BASE_SEED).unwrap(), spec, data)
}

pub fn fast(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig { lr: LR, ..AdamConfig::default() },
        batch_size: 32,
        epochs: 1000,
        seed,
        max_steps: Some(steps),
    }
}

/// Dev accuracy on the keyword task after fine-tuning the top 2 and all 4
/// layers for the same number of steps.
pub fn learnability(steps: usize) -> (f64, f64) {
    let (base, spec, data) = setup(SynthKind::Keyword, 1, SynthSizes { train: 512, dev: 256 });
    let (_, two) = partial_finetune(&base, &spec, 2, &fast(steps, 0), &data).unwrap();
    let (_, four) = partial_finetune(&base, &spec, 4, &fast(steps, 0), &data).unwrap();
    (two, four)
}

/// Names of frozen tensors whose hash ever differed from the base, checked
/// after every optimizer step of a fine-tuning run and a distillation run.
pub struct FrozenReport {
    pub finetune_steps: u64,
    pub distill_steps: u64,
    pub finetune_drift: Vec<String>,
    pub distill_drift: Vec<String>,
    /// Frozen tensors checked per step (embeddings and layers `1..=f`).
    pub frozen_tensors: usize,
}

fn drift(frozen: &[(String, String)], params: &ParamStore, out: &mut Vec<String>) {
    for (name, hash) in frozen {
        let now = params.get(name).map(|t| t.content_hash());
        if now.as_deref() != Some(hash.as_str()) && !out.contains(name) {
            out.push(name.clone());
        }
    }
}

pub fn frozen_immutability(steps: usize) -> FrozenReport {
    let (base, spec, data) = setup(SynthKind::Keyword, 2, SynthSizes { train: 512, dev: 64 });
    // f = 1 teacher with 3 task layers, distilled into 2.
    let layers = base.config.num_layers - 1;
    let f = base.config.num_layers - layers;
    let frozen: Vec<(String, String)> = base
        .params
        .tensor_hashes()
        .into_iter()
        .filter(|(n, _)| {
            matches!(ParamGroup::of(n), Some(ParamGroup::Embeddings))
                || matches!(ParamGroup::of(n), Some(ParamGroup::Layer(i)) if i <= f)
        })
        .collect();
    let mut finetune_drift = Vec::new();
    let mut finetune_steps = 0;
    let mut observe = |step: u64, params: &ParamStore| {
        drift(&frozen, params, &mut finetune_drift);
        finetune_steps = step;
    };
    let (teacher, _) = partial_finetune_observed(&base, &spec, layers, &fast(steps, 0), &data, Some(&mut observe)).unwrap();

    let plan = StudentPlan::new(2);
    let student = build_student(&teacher, &plan).unwrap();
    let mut distill_drift = Vec::new();
    let mut distill_steps = 0;
    let mut observe = |step: u64, params: &ParamStore| {
        drift(&frozen, params, &mut distill_drift);
        distill_steps = step;
    };
    let (trained, _) =
        distill_train_observed(&teacher, student, &plan, &fast(steps, 1).into(), &data, Some(&mut observe)).unwrap();
    // The checkpoints written out carry the same frozen tensors.
    drift(&frozen, &teacher.params, &mut finetune_drift);
    drift(&frozen, &trained.params, &mut distill_drift);
    FrozenReport { finetune_steps, distill_steps, finetune_drift, distill_drift, frozen_tensors: frozen.len() }
}

pub struct Ablation {
    pub teacher_scores: Vec<f64>,
    pub teacher_init: Vec<f64>,
    pub base_init: Vec<f64>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per seed: a pair-match teacher with 2 task layers, then 1-layer
/// students initialized from the teacher and from the base, distilled with
/// identical settings.
pub fn ablation(seeds: &[u64], teacher_steps: usize, student_steps: usize) -> Ablation {
    let (base, spec, data) = setup(SynthKind::PairMatch, 3, SynthSizes { train: 1024, dev: 256 });
    let plan = StudentPlan::new(1);
    let mut out = Ablation { teacher_scores: Vec::new(), teacher_init: Vec::new(), base_init: Vec::new() };
    for &seed in seeds {
        let (teacher, t) = partial_finetune(&base, &spec, 2, &fast(teacher_steps, seed), &data).unwrap();
        let cfg = fast(student_steps, seed).into();
        let from_teacher = build_student(&teacher, &plan).unwrap();
        let from_base = build_base_student(&base, &teacher, &plan, seed).unwrap();
        let (_, a) = distill_train(&teacher, from_teacher, &plan, &cfg, &data).unwrap();
        let (_, b) = distill_train(&teacher, from_base, &plan, &cfg, &data).unwrap();
        out.teacher_scores.push(t);
        out.teacher_init.push(a);
        out.base_init.push(b);
    }
    out
}
