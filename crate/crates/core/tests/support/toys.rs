//! Toy checkpoints for merge tests: a random base and task checkpoints
//! whose trainable tensors are perturbed away from it.

use layerfork::checkpoint::{Checkpoint, Provenance, Stage};
use layerfork::data::{build_vocab, HeadKind, Metric, Schema, TaskSpec, Vocab};
use layerfork::encoder::{self, Batch, EncoderConfig};
use layerfork::params::ParamGroup;
use layerfork::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_vocab() -> Vocab {
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    build_vocab(words.iter().map(String::as_str), 1000).unwrap()
}

pub fn toy_config(num_layers: usize, vocab: &Vocab) -> EncoderConfig {
    EncoderConfig { num_layers, hidden_dim: 16, num_heads: 2, ffn_dim: 32, vocab_size: vocab.len(), max_seq_len: 16 }
}

pub fn toy_base(num_layers: usize, seed: u64) -> Checkpoint {
    let vocab = toy_vocab();
    Checkpoint::new_base(toy_config(num_layers, &vocab), vocab, seed).unwrap()
}

pub fn random_head(rng: &mut ChaCha8Rng) -> (HeadKind, Metric) {
    match rng.gen_range(0..3) {
        0 => (HeadKind::Classification { classes: 2 }, Metric::Matthews),
        1 => (HeadKind::Classification { classes: 3 }, Metric::Accuracy),
        _ => (HeadKind::Regression, Metric::Pearson),
    }
}

/// Task checkpoint with frozen depth `f` and `n` task layers on `base`.
/// Trainable tensors are the base values plus uniform noise, so every
/// branch computes something different from the shared stack.
pub fn toy_task(base: &Checkpoint, id: &str, f: usize, n: usize, rng: &mut ChaCha8Rng) -> Checkpoint {
    let (head, metric) = random_head(rng);
    let spec = TaskSpec::new(id, head, metric, Schema::SingleSentence).unwrap();
    let depth = f + n;
    assert!(depth <= base.config.num_layers && n >= 1);
    let mut params = base.params.filtered(|g| !matches!(g, ParamGroup::Layer(i) if i > depth));
    encoder::init_head(&mut params, &base.config, head, rng.gen());
    params.set_frozen_depth(f).unwrap();
    let names: Vec<String> = params.trainable_names().map(str::to_string).collect();
    for name in names {
        let t = params.get(&name).unwrap();
        let data = t.data().iter().map(|v| v + rng.gen_range(-0.3f32..0.3)).collect();
        params.replace_value(&name, Tensor::new(t.shape().to_vec(), data).unwrap()).unwrap();
    }
    let ckpt = Checkpoint {
        config: base.config,
        frozen_depth: f,
        task_layers: n,
        task: Some(spec),
        vocab: base.vocab.clone(),
        base: base.base.clone(),
        provenance: Provenance { stage: Stage::FineTune, parent: None, seed: None, steps: 0, dev_score: None },
        params,
    };
    ckpt.validate().unwrap();
    ckpt
}

/// Random frozen depth and a task depth that fits under `num_layers`.
pub fn random_shape(num_layers: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let f = rng.gen_range(0..num_layers);
    let n = rng.gen_range(1..=num_layers - f);
    (f, n)
}

/// `count` random sequences of ids (no padding ids), varied lengths.
pub fn random_batch(cfg: &EncoderConfig, count: usize, rng: &mut ChaCha8Rng) -> Batch {
    let seqs: Vec<Vec<u32>> = (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=cfg.max_seq_len);
            (0..len).map(|_| rng.gen_range(1..cfg.vocab_size as u32)).collect()
        })
        .collect();
    Batch::new(&seqs).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random merge configuration: base plus 2..=8 task checkpoints.
pub fn random_fleet(seed: u64) -> (Checkpoint, Vec<Checkpoint>) {
    let mut r = rng(seed);
    let n = r.gen_range(4..=6);
    let base = toy_base(n, r.gen());
    let count = r.gen_range(2..=8);
    let tasks = (0..count)
        .map(|i| {
            let (f, l) = random_shape(n, &mut r);
            toy_task(&base, &format!("t{i}"), f, l, &mut r)
        })
        .collect();
    (base, tasks)
}

/// Merged per-task logits against standalone logits on `inputs` random
/// sequences. Returns the tasks whose outputs differ in any bit.
pub fn merge_mismatches(seed: u64, inputs: usize) -> Vec<String> {
    let (_, tasks) = random_fleet(seed);
    let refs: Vec<&Checkpoint> = tasks.iter().collect();
    let merged = layerfork::merge::merge(&refs).unwrap();
    let batch = random_batch(merged.config(), inputs, &mut rng(seed ^ 0xbeef));
    let ids: Vec<&str> = tasks.iter().map(|t| t.task_id()).collect();
    let out = merged.infer(&batch, &ids).unwrap();
    tasks
        .iter()
        .filter(|t| !out.outputs[t.task_id()].bit_eq(&t.logits(&batch).unwrap()))
        .map(|t| t.task_id().to_string())
        .collect()
}

/// Swaps a random member for a freshly drawn checkpoint of the same task.
/// Returns tasks whose outputs moved although they were not swapped, and
/// whether the swapped task now equals its new standalone model.
pub fn isolation_trial(seed: u64, inputs: usize) -> (Vec<String>, bool) {
    let (base, tasks) = random_fleet(seed);
    let refs: Vec<&Checkpoint> = tasks.iter().collect();
    let merged = layerfork::merge::merge(&refs).unwrap();
    let mut r = rng(seed ^ 0x5a5a);
    let victim = &tasks[r.gen_range(0..tasks.len())];
    let (f, l) = random_shape(base.config.num_layers, &mut r);
    let replacement = toy_task(&base, victim.task_id(), f, l, &mut r);
    let updated = merged.update_task(victim.task_id(), &replacement).unwrap();

    let batch = random_batch(merged.config(), inputs, &mut r);
    let ids: Vec<&str> = tasks.iter().map(|t| t.task_id()).collect();
    let before = merged.infer(&batch, &ids).unwrap();
    let after = updated.infer(&batch, &ids).unwrap();
    let moved = ids
        .iter()
        .filter(|&&t| t != victim.task_id() && !before.outputs[t].bit_eq(&after.outputs[t]))
        .map(|t| t.to_string())
        .collect();
    let fresh = after.outputs[victim.task_id()].bit_eq(&replacement.logits(&batch).unwrap());
    (moved, fresh)
}
