use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use fome::model::{param_specs, ModelConfig};
use serde_json::Value;

fn fome() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fome"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    fome().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn piped(dir: &Path, args: &[&str], input: &[u8]) -> Output {
    let mut child = fome()
        .current_dir(dir)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&out.stderr)))
}

/// Writes a preprocessed grid of one tone per file and returns its name.
fn grid_file(dir: &Path, name: &str, seed: u64, tone_hz: u32) -> String {
    let tone = format!("{tone_hz}:10");
    let seed = seed.to_string();
    let raw = ok(dir, &["synth", "--seed", &seed, "--seconds", "30", "--tone", &tone, "--run-manifest", "-"]);
    piped(dir, &["preprocess", "--out", name], &raw.stdout);
    name.into()
}

#[test]
fn smoke_pipeline_writes_checkpoint_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = ok(d, &["synth", "--seed", "7", "--channels", "2", "--seconds", "60", "--tone", "10:20", "--noise", "2"]);
    let manifest: Value = stderr_json(&raw);
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);

    let grid = piped(d, &["preprocess"], &raw.stdout);
    assert_eq!(&grid.stdout[..4], b"FEGP");
    piped(
        d,
        &[
            "pretrain", "--steps", "2000", "--preset", "tiny", "--batch-size", "1", "--grad-accum", "1",
            "--patches-per-sample", "10", "--checkpoint-every", "0", "--out", "tiny.fckp",
        ],
        &grid.stdout,
    );
    for f in ["tiny.fckp", "tiny.fckp.cfg", "tiny.fckp.loss.csv", "tiny.fckp.run.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(d.join("tiny.fckp.loss.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("step,lr,loss"));
    assert_eq!(trace.lines().count(), 2001);

    let m = json_file(&d.join("tiny.fckp.run.json"));
    assert_eq!(m["command"], "pretrain");
    assert_eq!(m["config"]["train"]["steps"], 2000);
    assert_eq!(m["inputs"][0]["path"], "-");
    assert_eq!(m["outputs"][0]["path"], "tiny.fckp");
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn eval_on_perfect_predictions_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("labels.csv"), "path,label,split\na.fegp,0,test\nb.fegp,1,test\nc.fegp,2,test\n").unwrap();
    std::fs::write(d.join("preds.csv"), "path,pred\nc.fegp,2\na.fegp,0\nb.fegp,1\n").unwrap();
    let out = ok(d, &["eval", "--manifest", "labels.csv", "--preds", "preds.csv"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["classification"]["accuracy"], 1.0);
    assert_eq!(report["classification"]["macro_f2"], 1.0);
}

#[test]
fn inspect_lists_every_tiny_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = grid_file(d, "g.fegp", 1, 10);
    ok(d, &["pretrain", "--in", &g, "--steps", "1", "--batch-size", "1", "--grad-accum", "1", "--out", "t.fckp"]);
    let out = ok(d, &["inspect-checkpoint", "--in", "t.fckp"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["matches_config"], true);

    let specs = param_specs(&ModelConfig::tiny());
    let listed = report["parameters"].as_array().unwrap();
    assert_eq!(listed.len(), specs.len());
    for (p, s) in listed.iter().zip(&specs) {
        assert_eq!(p["name"], s.name.as_str());
        let shape: Vec<usize> = serde_json::from_value(p["shape"].clone()).unwrap();
        assert_eq!(shape, s.shape);
    }
}

#[test]
fn inspect_flags_a_config_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = grid_file(d, "g.fegp", 1, 10);
    ok(d, &["pretrain", "--in", &g, "--steps", "1", "--batch-size", "1", "--grad-accum", "1", "--out", "t.fckp"]);
    std::fs::write(d.join("wide.cfg"), "preset=tiny\npatch_len=1500\nmodel_dim=32\n").unwrap();
    let out = ok(d, &["inspect-checkpoint", "--in", "t.fckp", "--config", "wide.cfg"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["matches_config"], false);
    assert!(!report["shape_mismatches"].as_array().unwrap().is_empty());
}

fn without_timestamps(mut m: Value) -> Value {
    let obj = m.as_object_mut().unwrap();
    obj.remove("started_unix_s");
    obj.remove("wall_time_s");
    m
}

#[test]
fn seeded_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = grid_file(d, "g.fegp", 3, 12);
    let args = [
        "pretrain", "--in", &g, "--steps", "4", "--batch-size", "2", "--grad-accum", "2", "--patches-per-sample",
        "2", "--seed", "11", "--out", "r.fckp",
    ];
    ok(d, &args);
    let first = without_timestamps(json_file(&d.join("r.fckp.run.json")));
    let ckpt = std::fs::read(d.join("r.fckp")).unwrap();
    ok(d, &args);
    let second = without_timestamps(json_file(&d.join("r.fckp.run.json")));
    assert_eq!(first, second);
    assert_eq!(std::fs::read(d.join("r.fckp")).unwrap(), ckpt);

    let synth = |seed: &str| ok(d, &["synth", "--seed", seed, "--seconds", "5", "--run-manifest", "-"]).stdout;
    assert_eq!(synth("5"), synth("5"));
    assert_ne!(synth("5"), synth("6"));
}

#[test]
fn finetune_classify_follows_manifest_splits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut manifest = String::from("path,label,split\n");
    for i in 0..6u64 {
        let label = i % 2;
        let name = grid_file(d, &format!("d{i}.fegp"), i, if label == 0 { 1 } else { 30 });
        let split = if i < 4 { "train" } else { "test" };
        manifest.push_str(&format!("{name},{label},{split}\n"));
    }
    std::fs::write(d.join("m.csv"), manifest).unwrap();
    let g = grid_file(d, "pre.fegp", 99, 10);
    ok(d, &["pretrain", "--in", &g, "--steps", "1", "--batch-size", "1", "--grad-accum", "1", "--out", "p.fckp"]);
    ok(
        d,
        &[
            "finetune", "classify", "--manifest", "m.csv", "--checkpoint", "p.fckp", "--out", "c.fckp", "--steps",
            "10", "--batch-size", "2", "--grad-accum", "1", "--eval-every", "0", "--mode", "probe",
        ],
    );
    let report = json_file(&d.join("c.fckp.metrics.json"));
    assert_eq!(report["task"], "classify");
    // Two test files of 5 patches each.
    let confusion: Vec<Vec<u64>> = serde_json::from_value(report["classification"]["confusion"].clone()).unwrap();
    assert_eq!(confusion.iter().flatten().sum::<u64>(), 2);
    let trace = std::fs::read_to_string(d.join("c.fckp.loss.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
    assert!(std::fs::read_to_string(d.join("c.fckp.cfg")).unwrap().contains("n_classes=2"));

    let out = ok(d, &["eval", "--manifest", "m.csv", "--checkpoint", "c.fckp", "--split", "test"]);
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    let n: u64 = serde_json::from_value::<Vec<Vec<u64>>>(eval["classification"]["confusion"].clone())
        .unwrap()
        .iter()
        .flatten()
        .sum();
    assert_eq!(n, 2);
}

#[test]
fn spectra_emits_one_row_per_slot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = grid_file(d, "g.fegp", 2, 10);
    ok(d, &["spectra", "--in", &g, "--out", "bands.csv"]);
    let text = std::fs::read_to_string(d.join("bands.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "channel,patch,delta,theta,alpha,beta,gamma1,gamma2,gamma3,gamma4");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // 2 channels × 5 patches
    assert_eq!(rows.len(), 10);
    for r in &rows {
        let alpha = r[4];
        assert!(r[2..].iter().all(|&v| v <= alpha), "{r:?}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["pretrain", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "UsageError");
    let out = run_in(dir.path(), &["synth", "--tone", "ten:1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn module_errors_exit_one_with_their_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = ok(d, &["synth", "--seconds", "10", "--run-manifest", "-"]).stdout;
    std::fs::write(d.join("r.feeg"), raw).unwrap();
    let out = run_in(d, &["preprocess", "--in", "r.feeg", "--notch", "55"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "ConfigError");
    assert!(err["message"].as_str().unwrap().contains("55"));

    std::fs::write(d.join("junk.fegp"), b"not a grid").unwrap();
    let out = run_in(d, &["spectra", "--in", "junk.fegp"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "FormatError");

    let out = run_in(d, &["preprocess", "--in", "missing.feeg"]);
    assert_eq!(stderr_json(&out)["error"], "IoError");
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["--help"]).status.success());
    assert!(run_in(dir.path(), &["--version"]).status.success());
}
