//! Vanilla knowledge distillation into fewer task-specific layers.
//!
//! A student keeps the teacher's frozen depth `f` and `n` task-specific
//! layers. By default it is initialized from the teacher's bottom `f + n`
//! layers and head.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Provenance, Stage};
use crate::data::{HeadKind, Label, TaskData};
use crate::encoder::{self, Batch};
use crate::error::{Error, Result};
use crate::params::{layer_param, ParamGroup, LAYER_COMPONENTS};
use crate::tensor::{Tape, Tensor, Var};
use crate::trainer::{check_data, supervised_loss, train_loop, StepObserver, TrainConfig};

/// Task-specific layer count above which a student is not offered to the
/// allocator.
pub const ALLOCATOR_LAYER_CAP: usize = 3;

/// Where the student's task-specific layers and head come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    /// Teacher's layers `1..=f+n` and head.
    Teacher,
    /// Base layers and a freshly seeded head.
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentPlan {
    /// Task-specific layers of the student.
    pub task_layers: usize,
    pub temperature: f32,
    pub alpha: f32,
}

impl StudentPlan {
    pub fn new(task_layers: usize) -> Self {
        StudentPlan { task_layers, temperature: 2.0, alpha: 0.5 }
    }

    pub fn validate(&self, teacher: &Checkpoint) -> Result<()> {
        check_kd_params(self.temperature, self.alpha)?;
        let task = teacher.task()?;
        if self.task_layers == 0 {
            return Err(Error::Task { task: task.id.clone(), detail: "student needs at least one task-specific layer".into() });
        }
        if self.task_layers > teacher.task_layers {
            return Err(Error::Task {
                task: task.id.clone(),
                detail: format!("student with {} task layers exceeds teacher's {}", self.task_layers, teacher.task_layers),
            });
        }
        Ok(())
    }

    /// Total student depth `f + n`.
    pub fn depth(&self, teacher: &Checkpoint) -> usize {
        teacher.frozen_depth + self.task_layers
    }
}

fn check_kd_params(temperature: f32, alpha: f32) -> Result<()> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::config(format!("temperature must be positive, got {temperature}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// Student initialized from the teacher's bottom `f + n` layers and head.
pub fn build_student(teacher: &Checkpoint, plan: &StudentPlan) -> Result<Checkpoint> {
    teacher.validate()?;
    plan.validate(teacher)?;
    let depth = plan.depth(teacher);
    let params = teacher.params.filtered(|g| !matches!(g, ParamGroup::Layer(i) if i > depth));
    let mut student = Checkpoint {
        task_layers: plan.task_layers,
        provenance: Provenance {
            stage: Stage::Distill,
            parent: Some(teacher.content_hash()?),
            seed: None,
            steps: 0,
            dev_score: None,
        },
        params,
        ..teacher.clone()
    };
    student.apply_trainable_flags()?;
    student.validate()?;
    Ok(student)
}

/// Ablation student: layers from the base model, pooler from the base, and
/// a freshly seeded head. Frozen layers are identical either way.
pub fn build_base_student(base: &Checkpoint, teacher: &Checkpoint, plan: &StudentPlan, seed: u64) -> Result<Checkpoint> {
    if !base.is_base() || base.base != teacher.base {
        return Err(Error::input("ablation student needs the teacher's own base"));
    }
    let mut student = build_student(teacher, plan)?;
    let depth = plan.depth(teacher);
    for i in teacher.frozen_depth + 1..=depth {
        for c in LAYER_COMPONENTS {
            let name = layer_param(i, c);
            let value = base.params.require(&name)?.value.clone();
            student.params.replace_value(&name, value)?;
        }
    }
    for name in ["pooler.weight", "pooler.bias"] {
        student.params.replace_value(name, base.params.require(name)?.value.clone())?;
    }
    if teacher.frozen_depth == 0 {
        for name in crate::params::EMBEDDING_PARAMS {
            student.params.replace_value(name, base.params.require(name)?.value.clone())?;
        }
    }
    encoder::init_head(&mut student.params, &student.config, teacher.task()?.head, seed);
    student.apply_trainable_flags()?;
    student.validate()?;
    Ok(student)
}

/// Distillation loss on the tape.
///
/// Classification: `α·CE(student, gold) + (1−α)·T²·KL(softmax(teacher/T) ‖ softmax(student/T))`.
/// Regression: `α·MSE(student, gold) + (1−α)·MSE(student, teacher)`.
pub fn kd_loss(
    tape: &mut Tape,
    student: Var,
    teacher: &Tensor,
    gold: &[Label],
    head: HeadKind,
    temperature: f32,
    alpha: f32,
) -> Result<Var> {
    check_kd_params(temperature, alpha)?;
    let hard = supervised_loss(tape, student, gold, head)?;
    let soft = match head {
        HeadKind::Classification { .. } => {
            let t = tape.constant(teacher.clone());
            let t = tape.scale(t, 1.0 / temperature)?;
            let p = tape.softmax(t)?;
            let target = tape.value(p).clone();
            let s = tape.scale(student, 1.0 / temperature)?;
            let kl = tape.kl_div(s, &target)?;
            tape.scale(kl, temperature * temperature)?
        }
        HeadKind::Regression => {
            let t = tape.constant(teacher.clone());
            tape.mse(student, t)?
        }
    };
    let hard = tape.scale(hard, alpha)?;
    let soft = tape.scale(soft, 1.0 - alpha)?;
    tape.add(hard, soft)
}

/// Distillation run settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub train: TrainConfig,
    /// Precompute teacher outputs for the whole training split once.
    pub cache_teacher: bool,
}

impl From<TrainConfig> for DistillConfig {
    fn from(train: TrainConfig) -> Self {
        DistillConfig { train, cache_teacher: false }
    }
}

/// Trains `student` against `teacher` on the task's training split.
pub fn distill_train(
    teacher: &Checkpoint,
    student: Checkpoint,
    plan: &StudentPlan,
    cfg: &DistillConfig,
    data: &TaskData,
) -> Result<(Checkpoint, f64)> {
    distill_train_observed(teacher, student, plan, cfg, data, None)
}

/// [`distill_train`] with a per-step observer.
pub fn distill_train_observed(
    teacher: &Checkpoint,
    student: Checkpoint,
    plan: &StudentPlan,
    cfg: &DistillConfig,
    data: &TaskData,
    observer: Option<StepObserver<'_>>,
) -> Result<(Checkpoint, f64)> {
    plan.validate(teacher)?;
    student.validate()?;
    let spec = teacher.task()?.clone();
    if student.task.as_ref() != Some(&spec) || student.base != teacher.base || student.config != teacher.config {
        return Err(Error::input("student and teacher disagree on task, base or config"));
    }
    if student.frozen_depth != teacher.frozen_depth || student.task_layers != plan.task_layers {
        return Err(Error::input("student shape does not match the plan"));
    }
    check_data(&spec, data)?;

    let cache = if cfg.cache_teacher {
        Some(teacher.predict(&data.train.iter().map(|e| e.ids.as_slice()).collect::<Vec<_>>(), 64)?)
    } else {
        None
    };
    let head = spec.head;
    let train = &data.train;
    let mut loss_fn = |tape: &mut Tape, out: Var, idx: &[usize]| {
        let gold: Vec<Label> = idx.iter().map(|&i| train[i].label).collect();
        let targets = match &cache {
            Some(rows) => {
                let k = head.outputs();
                let flat: Vec<f32> = idx.iter().flat_map(|&i| rows[i].iter().copied()).collect();
                Tensor::new(vec![idx.len(), k], flat)?
            }
            None => {
                let ids: Vec<&[u32]> = idx.iter().map(|&i| train[i].ids.as_slice()).collect();
                teacher.logits(&Batch::new(&ids)?)?
            }
        };
        kd_loss(tape, out, &targets, &gold, head, plan.temperature, plan.alpha)
    };

    let parent = student.provenance.parent.clone();
    let outcome = train_loop(student.params.clone(), &student.config, &spec, data, &cfg.train, &mut loss_fn, observer)?;
    let trained = Checkpoint {
        provenance: Provenance {
            stage: Stage::Distill,
            parent,
            seed: Some(cfg.train.seed),
            steps: outcome.steps,
            dev_score: Some(outcome.dev_score),
        },
        params: outcome.params,
        ..student
    };
    trained.validate()?;
    Ok((trained, outcome.dev_score))
}
