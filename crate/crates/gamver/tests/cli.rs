use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gamver(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gamver"))
        .current_dir(cwd)
        .args(args)
        .env("GAMVER_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = gamver(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn schema() -> jsonschema::Validator {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../schemas/report.v1.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn synth(cwd: &Path, out: &str, domain: &str, classes: &str, per_class: &str, seed: &str) {
    ok(
        cwd,
        &[
            "synthgen", "--out", out, "--domain", domain, "--classes", classes,
            "--samples-per-class", per_class, "--seed", seed, "--size", "16",
        ],
    );
}

#[test]
fn synthgen_writes_manifest_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", "rings", "5", "100", "7");
    let d = dir.path().join("d");
    let pgm = fs::read_dir(&d)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgm, 500);
    let manifest = fs::read_to_string(d.join("labels.csv")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines[0], "file,label");
    assert_eq!(lines.len(), 501);
    for c in 0..5 {
        assert_eq!(lines.iter().filter(|l| l.ends_with(&format!(",{c}"))).count(), 100);
    }
    let r = report(&d);
    assert!(schema().is_valid(&r));
    assert_eq!(r["command"], "synthgen");
    assert_eq!(r["config"]["seed"], 7);
}

#[test]
fn synthgen_is_deterministic_and_domains_differ() {
    let dir = tempfile::tempdir().unwrap();
    for (out, domain) in [("a", "rings"), ("b", "rings"), ("c", "stripes")] {
        ok(
            dir.path(),
            &[
                "synthgen", "--out", out, "--domain", domain, "--classes", "2",
                "--samples-per-class", "3", "--seed", "5", "--size", "16", "--noise-sigma", "0",
            ],
        );
    }
    let read = |o: &str, f: &str| fs::read(dir.path().join(o).join(f)).unwrap();
    for f in ["c0_00000.pgm", "c1_00002.pgm", "labels.csv", "report.json"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "c0_00000.pgm"), read("c", "c0_00000.pgm"));
}

#[test]
fn validation_errors_exit_two_and_name_the_culprit() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let out = gamver(dir.path(), &["train", "--out", "m", "--data", "empty"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("empty"), "{}", stderr(&out));

    let out = gamver(dir.path(), &["train", "--out", "m", "--data", "missing_dir"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing_dir"));

    synth(dir.path(), "d", "rings", "2", "2", "1");
    let out = gamver(
        dir.path(),
        &["synthgen", "--out", "x", "--classes", "1", "--samples-per-class", "2", "--size", "16"],
    );
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("bad.json"), "{\"noSuchKey\": 1}").unwrap();
    let out = gamver(dir.path(), &["train", "--out", "m", "--data", "d", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.json"));

    let out = gamver(dir.path(), &["train", "--out", "m", "--data", "d", "--jobs", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("jobs"));
}

fn write_records(path: &Path, prefix: &str, n: usize, base: f64) {
    let mut s = String::from("sampleId,iou,dice,ssim,cosine,pearson,kl,wasserstein,degenerate,label\n");
    for i in 0..n {
        let v = base + i as f64 * 0.01;
        s.push_str(&format!("{prefix}{i},{v},{v},{v},{v},{v},{},{},0,\n", 1.0 - v, 1.0 - v));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn too_few_records_per_fold_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    write_records(&dir.path().join("a.csv"), "a", 3, 0.8);
    write_records(&dir.path().join("b.csv"), "b", 3, 0.1);
    let out = gamver(
        dir.path(),
        &["fit-verify", "--out", "f", "--aligned", "a.csv", "--misaligned", "b.csv", "--folds", "5"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn fit_verify_and_report_on_handmade_records() {
    let dir = tempfile::tempdir().unwrap();
    write_records(&dir.path().join("a.csv"), "a", 20, 0.7);
    write_records(&dir.path().join("b.csv"), "b", 20, 0.1);
    let text = ok(
        dir.path(),
        &[
            "fit-verify", "--out", "f", "--aligned", "a.csv", "--misaligned", "b.csv", "--trees", "15",
            "--jobs", "3",
        ],
    );
    assert!(text.contains("roc_auc"));
    let r = report(&dir.path().join("f"));
    assert!(schema().is_valid(&r));
    assert_eq!(r["result"]["crossValidation"]["rocAuc"].as_f64(), Some(1.0), "{r}");

    ok(
        dir.path(),
        &[
            "fit-verify", "--out", "g", "--aligned", "a.csv", "--misaligned", "b.csv", "--trees", "15",
            "--jobs", "1",
        ],
    );
    for f in ["forest.json", "dataset.csv", "oof_scores.csv"] {
        assert_eq!(
            fs::read(dir.path().join("f").join(f)).unwrap(),
            fs::read(dir.path().join("g").join(f)).unwrap(),
            "{f} depends on --jobs"
        );
    }

    let table = ok(dir.path(), &["report", "--out", "r", "--records", "f/dataset.csv"]);
    assert!(table.contains("label 1"), "{table}");
    assert!(table.contains("label 0"), "{table}");
    for m in ["iou", "dice", "ssim", "cosine", "pearson", "kl", "wasserstein"] {
        assert!(table.contains(m));
    }
    let r = report(&dir.path().join("r"));
    assert!(schema().is_valid(&r));
    let stats = r["result"]["statistics"].as_array().unwrap();
    assert_eq!(stats.len(), 2);
}

#[test]
fn unreadable_image_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", "rings", "2", "4", "1");
    ok(dir.path(), &["train", "--out", "m", "--data", "d", "--epochs", "1", "--arch", "small"]);
    fs::create_dir(dir.path().join("mixed")).unwrap();
    fs::copy(dir.path().join("d/c0_00000.pgm"), dir.path().join("mixed/good.pgm")).unwrap();
    fs::write(dir.path().join("mixed/bad.pgm"), b"P2\n2 2\n255\n0 0 0 0\n").unwrap();
    ok(dir.path(), &["build-ref", "--out", "r", "--model", "m", "--data", "d", "--working-size", "16", "--all-samples"]);
    ok(
        dir.path(),
        &["extract", "--out", "e", "--model", "m", "--ref", "r", "--data", "mixed", "--method", "gradcam"],
    );
    let r = report(&dir.path().join("e"));
    let text = r.to_string();
    assert!(text.contains("bad.pgm"), "{text}");
    let records = fs::read_to_string(dir.path().join("e/records.csv")).unwrap();
    assert_eq!(records.lines().count(), 2);
}
