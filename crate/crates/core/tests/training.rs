mod support;

use layerfork::data::{SynthKind, SynthSizes};
use layerfork::distill::{build_student, distill_train, StudentPlan};
use layerfork::trainer::{evaluate_checkpoint, partial_finetune};
use support::desk::*;

#[test]
fn keyword_task_learned_with_two_layers_and_full_depth_adds_little() {
    let start = std::time::Instant::now();
    let (two, four) = learnability(300);
    eprintln!("keyword: L=2 {two:.4}, L=4 {four:.4} in {:?}", start.elapsed());
    assert!(two >= 0.95, "L=2 dev accuracy {two}");
    assert!(four <= two + 0.05, "L=4 {four} vs L=2 {two}");
}

#[test]
fn frozen_tensors_never_move() {
    let r = frozen_immutability(200);
    assert!(r.finetune_steps >= 200 && r.distill_steps >= 200);
    assert!(r.frozen_tensors > 4, "only {} frozen tensors checked", r.frozen_tensors);
    assert!(r.finetune_drift.is_empty(), "{:?}", r.finetune_drift);
    assert!(r.distill_drift.is_empty(), "{:?}", r.distill_drift);
}

#[test]
fn student_of_full_width_is_the_teacher() {
    let (base, spec, data) = setup(SynthKind::Keyword, 4, SynthSizes { train: 256, dev: 64 });
    let (teacher, _) = partial_finetune(&base, &spec, 2, &fast(40, 0), &data).unwrap();
    let same = build_student(&teacher, &StudentPlan::new(2)).unwrap();
    assert_eq!(same.params, teacher.params);
    assert!(build_student(&teacher, &StudentPlan::new(3)).is_err());
    assert!(build_student(&teacher, &StudentPlan::new(0)).is_err());

    // Zero distillation steps returns the initialized student unchanged.
    let plan = StudentPlan::new(1);
    let student = build_student(&teacher, &plan).unwrap();
    let mut cfg = fast(0, 0);
    cfg.max_steps = Some(0);
    let (trained, score) = distill_train(&teacher, student.clone(), &plan, &cfg.into(), &data).unwrap();
    assert_eq!(trained.params, student.params);
    assert_eq!(score, evaluate_checkpoint(&student, &data.dev, 64).unwrap());
}

#[test]
fn self_distillation_keeps_teacher_accuracy() {
    let (base, spec, data) = setup(SynthKind::Keyword, 5, SynthSizes { train: 512, dev: 256 });
    let (teacher, t) = partial_finetune(&base, &spec, 2, &fast(300, 0), &data).unwrap();
    let plan = StudentPlan::new(2);
    let (_, s) = distill_train(&teacher, build_student(&teacher, &plan).unwrap(), &plan, &fast(100, 1).into(), &data).unwrap();
    assert!(s >= t - 0.02, "student {s} vs teacher {t}");
}
