use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sleepconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sleepconf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sleepconf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn zero_error_cohort_is_perfect_and_needs_no_review() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["gen", "--recordings", "2", "--epochs", "8", "--pairs", "1", "--error-rate", "0", "--seed", "1", "--out", p(&data)]);
    let report = dir.path().join("m.json");
    ok(&["metrics", "--data", p(&data), "--out", p(&report)]);
    let rows = json(&report);
    assert_eq!(rows[0]["epochwise"]["acc"], 1.0);

    let tcp = dir.path().join("tcp.csv");
    ok(&["tcp", "--data", p(&data), "--out", p(&tcp)]);
    let sim = dir.path().join("sim");
    ok(&["simulate", "--data", p(&data), "--scores", p(&tcp), "--out", p(&sim)]);
    let curve = fs::read_to_string(sim.join("curve_ID_TEST.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next().unwrap(), "t,effort_pct,acc,f1w,kappa,detection_recall");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 101);
    for row in rows {
        let acc: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(acc, 1.0, "{row}");
    }
}

#[test]
fn every_subcommand_help_lists_flags_and_defaults() {
    let expected: &[(&str, &[&str])] = &[
        ("gen", &["--out", "--recordings", "--epochs", "--pairs", "--error-rate", "--stay-prob", "--unknown-rate", "--seed"]),
        ("measures", &["--data", "--measure", "--out"]),
        ("tcp", &["--data", "--out"]),
        ("train", &["--data", "--splits", "--model-out", "--seed", "--max-epochs", "--patience", "--lr"]),
        ("predict", &["--data", "--model", "--out"]),
        ("eval", &["--data", "--scores", "--out"]),
        ("metrics", &["--data", "--predictions", "--out"]),
        ("bootstrap", &["--data", "--scores", "--hypothesis", "--metric", "--reps", "--seed", "--group-by", "--out"]),
        ("simulate", &["--data", "--scores", "--grid-step", "--benchmarks", "--out"]),
        ("render", &["--data", "--recording", "--scores", "--out", "--with-reference"]),
    ];
    for (cmd, flags) in expected {
        let help = ok(&[cmd, "-h"]);
        let option_lines: Vec<&str> = help.lines().filter(|l| l.trim_start().starts_with("--")).collect();
        assert_eq!(option_lines.len(), flags.len(), "{cmd}: {help}");
        for flag in *flags {
            let line = option_lines
                .iter()
                .find(|l| l.trim_start().starts_with(&format!("{flag} ")) || l.trim() == *flag)
                .unwrap_or_else(|| panic!("{cmd} help lacks {flag}"));
            if *flag != "--with-reference" {
                assert!(line.contains("[default:") || line.contains("[required]"), "{cmd} {flag}: {line}");
            }
        }
    }
}

#[test]
fn errors_are_single_json_lines() {
    let out = sleepconf(&["gen", "--out", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["error"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let out = sleepconf(&["metrics", "--data", p(&dir.path().join("missing")), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    let line: serde_json::Value = serde_json::from_str(&stderr).unwrap();
    assert_eq!(line["error"], "io");
    assert!(!dir.path().join("m.json").exists());

    let out = sleepconf(&["gen", "--out", p(&dir.path().join("g")), "--error-rate", "1.5", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["error"], "invalid_config");
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let f = |name: &str| dir.path().join(name);
    ok(&["gen", "--recordings", "24", "--epochs", "60", "--seed", "5", "--out", p(&d)]);
    let summary = ok(&["train", "--data", p(&d), "--model-out", p(&f("m.cnw")), "--seed", "5", "--max-epochs", "2"]);
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["param_count"], 35628);
    assert!(f("m.history.csv").exists());

    // the manifest now carries the subject split
    let manifest = json(&d.join("manifest.json"));
    let tags: std::collections::BTreeSet<String> = manifest
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["domain_tag"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(tags.len(), 3);

    ok(&["predict", "--data", p(&d), "--model", p(&f("m.cnw")), "--out", p(&f("tcp.csv"))]);
    ok(&["measures", "--data", p(&d), "--out", p(&f("meas.csv"))]);
    ok(&["eval", "--data", p(&d), "--scores", p(&f("meas.csv")), "--out", p(&f("e.json"))]);
    let eval = json(&f("e.json"));
    assert_eq!(eval.as_array().unwrap().len(), 7);
    for row in eval.as_array().unwrap() {
        assert_eq!(row["split"], "ID_TEST");
        let auroc = row["auroc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&auroc));
    }
    ok(&["simulate", "--data", p(&d), "--scores", p(&f("tcp.csv")), "--out", p(&f("sim"))]);
    let bench = json(&f("sim").join("benchmarks_ID_TEST.json"));
    assert_eq!(bench["benchmarks"].as_array().unwrap().len(), 12);

    ok(&["bootstrap", "--data", p(&d), "--scores", p(&f("tcp.csv")), "--hypothesis", "h01", "--reps", "50", "--seed", "2", "--out", p(&f("b.csv"))]);
    let boot = fs::read_to_string(f("b.csv")).unwrap();
    assert!(boot.starts_with("hypothesis,group,metric,n,median,ci_low,ci_high,reps,seed,rejected"));
    // a handful of test subjects falls short of the minimum group size
    assert!(boot.lines().skip(1).all(|l| l.ends_with("insufficient subjects")));

    for name in ["a.svg", "b.svg"] {
        ok(&["render", "--data", p(&d), "--recording", "rec0003", "--scores", p(&f("tcp.csv")), "--out", p(&f(name)), "--with-reference"]);
    }
    assert_eq!(fs::read(f("a.svg")).unwrap(), fs::read(f("b.svg")).unwrap());
}

#[test]
fn predictions_file_overrides_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    ok(&["gen", "--recordings", "1", "--epochs", "4", "--pairs", "1", "--error-rate", "0", "--unknown-rate", "0", "--seed", "9", "--out", p(&d)]);
    let preds = dir.path().join("pred.csv");
    fs::write(&preds, "recording_id,epoch_index,predicted\nrec0000,0,N3\nrec0000,1,N3\nrec0000,2,N3\nrec0000,3,N3\n").unwrap();
    let out = dir.path().join("m.json");
    ok(&["metrics", "--data", p(&d), "--predictions", p(&preds), "--out", p(&out)]);
    // the chain starts in W, so an all-N3 prediction misses at least the first epoch
    let acc = json(&out)[0]["epochwise"]["acc"].as_f64().unwrap();
    assert!(acc < 1.0);
}
