use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sketchfer"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth(dir: &Path, raw: bool) -> String {
    let data = dir.join("data");
    let mut args = vec![
        "synth",
        "--out-dir",
        data.to_str().unwrap(),
        "--n-train",
        "120",
        "--n-test",
        "40",
        "--classes",
        "3",
        "--dims",
        "8,12,6",
        "--signal",
        "0,4,0",
    ];
    if raw {
        args.extend(["--raw-dim", "10"]);
    }
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data.join("manifest.json").to_str().unwrap().to_string()
}

fn small(manifest: &str, out: &Path) -> Vec<String> {
    [
        "--manifest",
        manifest,
        "--buckets",
        "16",
        "--trials",
        "1",
        "--portion",
        "1.0",
        "--out-dir",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_sub(sub: &str, manifest: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub.to_string()];
    args.extend(small(manifest, out));
    args.extend(extra.iter().map(|s| s.to_string()));
    bin().args(&args).output().unwrap()
}

fn results(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("results.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_results_and_series() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), false);
    let out = tmp.path().join("out");
    let o = run_sub("run", &m, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "results.json",
        "accuracy.csv",
        "mu.csv",
        "ece.csv",
        "timings.csv",
        "run.log",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let r = results(&out);
    assert_eq!(r["mode"], "supervised");
    assert_eq!(r["trials"].as_array().unwrap().len(), 1);
    assert!(r["trials"][0]["accuracy"].as_f64().unwrap() > 0.8);
}

#[test]
fn subcommands_emit_their_series() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), true);
    let cases: [(&str, &[&str], &str); 4] = [
        ("ablate", &[], "ablation.csv"),
        ("ablate", &["--individual"], "ablation.csv"),
        ("semi", &["--labels-per-class", "5"], "semi.csv"),
        ("baseline", &["--kind", "rbf-bank"], "baseline.csv"),
    ];
    for (i, (sub, extra, file)) in cases.iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        let o = run_sub(sub, &m, &out, extra);
        assert_eq!(code(&o), 0, "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).exists(), "{sub} {file}");
    }
    let r = results(&tmp.path().join("out1"));
    assert_eq!(r["mode"], "ablation-individual");
}

#[test]
fn export_writes_scores_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), false);
    let out = tmp.path().join("out");
    let o = run_sub("export", &m, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scores = sketchfer::npy::read_f64(out.join("predictions.npy")).unwrap();
    assert_eq!(scores.shape(), (120, 3));
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("predictions.json")).unwrap()).unwrap();
    for key in ["alpha", "mu", "sigma_sq", "temperature"] {
        assert!(!meta[key].is_null(), "{key}");
    }
    assert!(out.join("model.bin").exists());
}

#[test]
fn repeated_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), false);
    let mut rs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        assert_eq!(code(&run_sub("run", &m, &out, &["--seed", "11"])), 0);
        let mut r = results(&out);
        r.as_object_mut().unwrap().remove("timings");
        rs.push(r);
    }
    assert_eq!(rs[0], rs[1]);
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("absent.json");
    let o = run_sub("run", missing.to_str().unwrap(), &out, &[]);
    assert_eq!(code(&o), 2);

    let m = synth(tmp.path(), false);
    let o = run_sub("run", &m, &out, &["--stacks", "5"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let o = run_sub("semi", &m, &out, &["--labels-per-class", "1000"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let mut manifest: Value = serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
    manifest["layers"][1]["dim"] = 13.into();
    let bad = tmp.path().join("data").join("bad.json");
    fs::write(&bad, manifest.to_string()).unwrap();
    let o = run_sub("run", bad.to_str().unwrap(), &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("layer 1"));

    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"portions": [2.0]}"#).unwrap();
    let o = run_sub("run", &m, &out, &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "flag overrides the config portion");
    let o = bin()
        .args([
            "run",
            "--manifest",
            &m,
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), false);
    // an all-zero layer has nothing to sketch
    let zeros = nalgebra::DMatrix::<f64>::zeros(120, 12);
    sketchfer::npy::write_f32(tmp.path().join("data/layer_01_train.npy"), &zeros).unwrap();
    let o = run_sub("run", &m, &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lowrank"));
}
