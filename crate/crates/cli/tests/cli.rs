use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn layerfork(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layerfork")).args(args).current_dir(cwd).env_remove("LAYERFORK_FIXTURES").output().unwrap()
}

fn ok_json(args: &[&str], cwd: &Path) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = layerfork(&full, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fixtures_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn report_overhead_prints_layers_and_percent() {
    let dir = tempfile::tempdir().unwrap();
    let out = layerfork(&["report-overhead", "--fixtures", "kd1"], dir.path());
    assert!(out.status.success());
    assert!(text(&out).contains("15 (15.6%)"), "{}", text(&out));

    let path = fixtures_dir().join("table2_wo_kd.json");
    let v = ok_json(&["report-overhead", "--ladders", path.to_str().unwrap()], dir.path());
    assert_eq!(v["layers"], 67);
    assert_eq!(v["overhead"], "67 (69.8%)");
    assert_eq!(v["shared"], 7);
}

#[test]
fn allocate_reproduces_bundled_choices() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&["allocate", "--fixtures", "table3", "--c", "1.0", "--c", "3.0"], dir.path());
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let layers = |row: &Value, task: &str| {
        row["selections"].as_array().unwrap().iter().find(|s| s["task"] == task).unwrap()["layers"].as_u64().unwrap()
    };
    assert_eq!(layers(&rows[0], "RTE"), 5);
    assert_eq!(layers(&rows[0], "CoLA"), 8);
    assert_eq!(rows[0]["layers"], 33);
    assert_eq!(rows[1]["overhead"], "18 (18.8%)");

    // Without --c every published threshold is evaluated.
    let all = ok_json(&["allocate", "--fixtures", "table3"], dir.path());
    assert_eq!(all.as_array().unwrap().len(), 3);
}

#[test]
fn search_over_bundled_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&["search-l", "--fixtures", "table1"], dir.path());
    assert_eq!(v["MNLI"]["layers"], 8);
    assert_eq!(v["MNLI"]["frozen_depth"], 4);
    assert_eq!(v.as_object().unwrap().len(), 8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(layerfork(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(layerfork(&["merge"], dir.path()).status.code(), Some(2));
    let missing = layerfork(&["infer", "nope.ckpt", "--text", "a"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    assert_eq!(layerfork(&["allocate", "--fixtures", "table9"], dir.path()).status.code(), Some(1));
    assert_eq!(
        layerfork(&["distill", "--teacher", "t", "--task", "x", "--layers", "1", "--out", "o", "--init", "both"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn fixtures_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(fixtures_dir()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    let mixed = dir.path().join("table2_mixed.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&mixed).unwrap()).unwrap();
    let n = v["tasks"][0]["task_layers"].as_u64().unwrap();
    v["tasks"][0]["task_layers"] = (n + 1).into();
    std::fs::write(&mixed, v.to_string()).unwrap();

    let run = |fixtures: &Path| {
        Command::new(env!("CARGO_BIN_EXE_layerfork"))
            .args(["--json", "report-overhead", "--fixtures", "mixed"])
            .env("LAYERFORK_FIXTURES", fixtures)
            .output()
            .unwrap()
    };
    let out = run(dir.path());
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["layers"], 34);

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(run(empty.path()).status.code(), Some(1));
}

#[test]
fn train_merge_and_infer_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let small = ["--train", "256", "--dev", "64"];
    let mut synth = vec!["synth", "--kind", "keyword", "--out", "kw"];
    synth.extend_from_slice(&small);
    ok_json(&synth, cwd);
    let mut synth = vec!["synth", "--kind", "parity", "--out", "par"];
    synth.extend_from_slice(&small);
    ok_json(&synth, cwd);
    let base_args =
        ["init-base", "--task", "kw", "--task", "par", "--out", "base.ckpt", "--layers", "3", "--hidden", "16", "--ffn", "32"];
    ok_json(&base_args, cwd);
    let train = |task: &str, layers: &str, out: &str| {
        ok_json(
            &["train", "--base", "base.ckpt", "--task", task, "--layers", layers, "--out", out, "--steps", "20", "--lr", "1e-3"],
            cwd,
        )
    };
    train("kw", "1", "kw.ckpt");
    train("par", "2", "par.ckpt");

    let eval = ok_json(&["eval", "kw.ckpt", "--task", "kw"], cwd);
    let score = eval["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(eval["examples"], 64);

    ok_json(&["merge", "kw.ckpt", "par.ckpt", "--out", "merged.json"], cwd);
    std::fs::write(cwd.join("inputs.txt"), "w0 w1 w2\nsome words here\n\nkeyword maybe\n").unwrap();

    let outputs = |model: &str, task: &str| {
        let v = ok_json(&["infer", model, "--task", task, "--input", "inputs.txt"], cwd);
        v.as_array().unwrap().iter().map(|r| r["outputs"][task]["output"].clone()).collect::<Vec<_>>()
    };
    let kw_id = ok_json(&["eval", "kw.ckpt", "--task", "kw"], cwd)["task"].as_str().unwrap().to_string();
    let par_id = ok_json(&["eval", "par.ckpt", "--task", "par"], cwd)["task"].as_str().unwrap().to_string();
    assert_eq!(outputs("merged.json", &kw_id), outputs("kw.ckpt", &kw_id));
    assert_eq!(outputs("merged.json", &par_id), outputs("par.ckpt", &par_id));
    assert_eq!(outputs("kw.ckpt", &kw_id).len(), 3);

    // Shared depth 2 (parity branches at 1, keyword at 2) plus 1 + 2 task layers.
    assert_eq!(ok_json(&["report-overhead", "--model", "merged.json"], cwd)["layers"], 5);

    let wrong = layerfork(&["infer", "kw.ckpt", "--task", &par_id, "--text", "w1"], cwd);
    assert_eq!(wrong.status.code(), Some(1));
    let base = layerfork(&["eval", "base.ckpt", "--task", "kw"], cwd);
    assert_eq!(base.status.code(), Some(1));
}
