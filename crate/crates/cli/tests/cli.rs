use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_centerlab"))
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(out: &Path, args: &[&str]) -> Output {
    let o = bin().arg("--out").arg(out).args(args).output().expect("binary runs");
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn linear_spectrum_config_matches_log_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_file("configs/spectrum_linear.json");
    run(dir.path(), &["run", cfg.to_str().unwrap()]);
    let mut rdr = csv::Reader::from_path(dir.path().join("spectrum.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["start", "exp1", "exp2", "exp3", "halfwidth"]);
    let expected = [1.17777, 0.44147, -1.61924];
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for (i, e) in expected.iter().enumerate() {
            let x: f64 = rec[i + 1].parse().unwrap();
            assert!((x - e).abs() < 1e-3, "column {} = {x}", i + 1);
        }
        rows += 1;
    }
    assert_eq!(rows, 4);
}

#[test]
fn kan_a_zero_exits_with_model_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_file("configs/kan_invalid.json");
    let o = bin().arg("--out").arg(dir.path()).arg("run").arg(cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("condition (3)"));
    let o = bin().arg("--out").arg(dir.path()).args(["kan", "validate", "--a", "0"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"experiment": {"op": "spectrum", "strats": 3}}"#).unwrap();
    let o = bin().arg("--out").arg(dir.path()).arg("run").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().arg("--out").arg(dir.path()).args(["entropy", "--eps", "0.7"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn model_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strong.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"matrix": [1,-1,0,-1,2,-1,0,-1,2], "s": 5.0, "center": [0.5,0.5,0.5],
            "radius": 0.2, "direction": [0,1,0]}}"#,
    )
    .unwrap();
    let o = bin().arg("--out").arg(dir.path()).arg("--config").arg(&cfg).arg("spectrum").output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn outputs_are_identical_across_worker_counts() {
    let cases: [&[&str]; 4] = [
        &["disint", "--samples", "50000", "--bins", "4x16", "--sampler", "orbit", "--burn-in", "50"],
        &["entropy", "--samples", "40000", "--bundle", "c", "--base-points", "8"],
        &["spectrum", "--starts", "3", "--iters", "2000"],
        &["kan", "basins", "--grid", "4", "--horizon", "500", "--s", "0.1"],
    ];
    for args in cases {
        let mut seen = Vec::new();
        for workers in ["1", "2", "1"] {
            let dir = tempfile::tempdir().unwrap();
            let mut full = vec!["--seed", "7", "--workers", workers];
            full.extend_from_slice(args);
            run(dir.path(), &full);
            seen.push(outputs(dir.path()));
        }
        assert_eq!(seen[0], seen[1], "{args:?}");
        assert_eq!(seen[0], seen[2], "{args:?}");
    }
}

#[test]
fn reports_validate_against_schema() {
    let schema = read_json(&repo_file("schemas/run_report.schema.json"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 10] = [
        &["model", "validate", "--grid", "3"],
        &["semiconj", "residual", "--samples", "20"],
        &["semiconj", "fiber", "--z", "0.2,0.4,0.6", "--z", "0.5,0.5,0.5"],
        &["leaf", "trace", "--len", "0.2"],
        &["growth", "--n", "6"],
        &["pliss", "--iters", "500"],
        &["disint", "--foliation", "u", "--samples", "2000"],
        &["kan", "validate", "--a", "0.25", "--s", "0.1"],
        &["kan", "measure", "--cells", "16", "--per-cell", "20"],
        &["kan", "holonomy", "--nodes", "16", "--depth", "8"],
    ];
    for args in cases {
        run(dir.path(), args);
    }
    run(dir.path(), &["kan", "singularity", "--samples", "2048", "--blocks", "8", "--depth", "10"]);
    let mut checked = 0;
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let p = entry.unwrap().path();
        match p.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let v = read_json(&p);
                let errors: Vec<String> = validator.iter_errors(&v).map(|e| e.to_string()).collect();
                assert!(errors.is_empty(), "{}: {errors:?}", p.display());
                checked += 1;
            }
            Some("csv") => {
                let mut rdr = csv::Reader::from_path(&p).unwrap();
                assert!(!rdr.headers().unwrap().is_empty(), "{}", p.display());
            }
            _ => {}
        }
    }
    assert_eq!(checked, 11);
}

#[test]
fn pliss_reads_series_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("series.csv");
    std::fs::write(&input, "k,value\n0,2\n1,0\n2,0\n3,0\n").unwrap();
    run(dir.path(), &["pliss", "--input", input.to_str().unwrap(), "--tau", "1"]);
    let v = read_json(&dir.path().join("pliss.json"));
    assert_eq!(v["result"]["count"], 3);
    let text = std::fs::read_to_string(dir.path().join("pliss.csv")).unwrap();
    assert!(text.starts_with("index,value,pliss,censored\n0,2,0,0\n1,0,1,0\n"), "{text}");
}
