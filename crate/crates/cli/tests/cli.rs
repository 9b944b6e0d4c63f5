use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use thermoforge::data::{CaseConfig, ComponentTemplate, DatasetManifest};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermoforge"))
        .args(args)
        .output()
        .expect("run thermoforge")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(out: &Path, labels: bool) -> Output {
    let mut args = vec!["generate", "--case", "desk", "--grid", "16", "--counts", "8,1,1", "--seed", "4", "--out", p(out)];
    if labels {
        args.push("--labels");
    }
    run(&args)
}

#[test]
fn generate_writes_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let o = generate(&out, true);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.samples.len(), 10);
    for s in &manifest.samples {
        assert!(out.join(s.temperature.as_ref().unwrap()).exists());
    }
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(generate(&a, false).status.success());
    assert!(generate(&b, false).status.success());
    for name in ["manifest.json", "layouts/00000.json", "layouts/00009.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn infeasible_layout_exits_with_placement_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut case = CaseConfig::desk(16).unwrap();
    case.components = vec![ComponentTemplate::square(0.06, 1e4); 2];
    let path = dir.path().join("tight.json");
    fs::write(&path, serde_json::to_string(&case).unwrap()).unwrap();
    let o = run(&["generate", "--case", p(&path), "--counts", "1,0,0", "--out", p(&dir.path().join("ds"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn missing_case_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--case"), "{}", stderr(&o));
}

#[test]
fn evaluate_without_labels_and_solving_disabled_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    assert!(generate(&ds, false).status.success());
    let ck = dir.path().join("net.tfpc");
    let o = run(&[
        "train", "--dataset", p(&ds), "--epochs", "0", "--base-width", "2", "--depth", "1", "--groups", "1",
        "--quiet", "--out", p(&ck),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["evaluate", "--checkpoint", p(&ck), "--dataset", p(&ds), "--no-solve", "--out-dir", p(&dir.path().join("ev"))]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));

    let ev = dir.path().join("ev2");
    let o = run(&["evaluate", "--checkpoint", p(&ck), "--dataset", p(&ds), "--heatmaps", "1", "--out-dir", p(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("sample_id,mae,cmae,maxae,mtae\n"));
    assert_eq!(csv.lines().count(), 2);
    assert!(fs::read_dir(&ev).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "png")));
}

#[test]
fn solve_reports_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    assert!(generate(&ds, false).status.success());
    let field = dir.path().join("t.tfpf");
    let o = run(&[
        "solve", "--case", "desk", "--grid", "16", "--layout", p(&ds.join("layouts/00000.json")), "--heatmap", "--out",
        p(&field),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(field.with_extension("json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    assert!(field.exists() && field.with_extension("png").exists());
}

#[test]
fn train_writes_report_beside_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("net.tfpc");
    let o = run(&[
        "train", "--case", "desk", "--grid", "16", "--counts", "4,2,2", "--epochs", "2", "--base-width", "2", "--depth",
        "1", "--groups", "1", "--quiet", "--out", p(&ck),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(ck.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,lr,train_loss,val_mae"));
    assert_eq!(csv.lines().count(), 3);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(ck.with_extension("json")).unwrap()).unwrap();
    assert_eq!(summary["val_mae"].as_array().unwrap().len(), 2);
    assert!(summary["test"]["mae_k"].as_f64().unwrap().is_finite());
}

#[test]
fn help_lists_training_flags() {
    let o = run(&["train", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--epochs", "--lr", "--eta1", "--eta2", "--loss", "--padding", "--detach-target", "--norm"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}
