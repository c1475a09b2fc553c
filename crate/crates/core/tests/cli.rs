use std::path::Path;
use std::process::{Command, Output};

fn dcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_training_csv(path: &Path, n: usize) {
    let mut s = String::from("a,b,y\n");
    for i in 0..n {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.11).cos();
        s += &format!("{a},{b},{}\n", a.abs() + 0.5 * b);
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn fit_inspect_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    let model = dir.path().join("m.json");
    write_training_csv(&data, 120);
    let o = dcf(&["fit", "--data", data.to_str().unwrap(), "--out", model.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("variant\tsymmetric") && text.contains("kind\tlinf"), "{text}");

    let o = dcf(&["inspect", "--model", model.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("d\t2") && text.contains("standardized\ttrue"), "{text}");

    // The training file has a response column; a covariates-only file works too.
    let o = dcf(&["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines[0], "prediction");
    assert_eq!(lines.len(), 121);
    let bare = dir.path().join("x.csv");
    std::fs::write(&bare, "0.1,0.2\n-0.5,0.9\n").unwrap();
    let out = dir.path().join("p.csv");
    let o = dcf(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--data",
        bare.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let written = std::fs::read_to_string(out).unwrap();
    assert_eq!(written.lines().count(), 3);
    assert!(written.lines().skip(1).all(|l| l.parse::<f64>().unwrap().is_finite()));

    // Same seed, same bytes.
    let model2 = dir.path().join("m2.json");
    dcf(&["fit", "--data", data.to_str().unwrap(), "--out", model2.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&model2).unwrap());
}

#[test]
fn exit_codes_separate_usage_data_and_success() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    write_training_csv(&data, 30);
    let d = data.to_str().unwrap();
    assert_eq!(dcf(&["nonsense"]).status.code(), Some(2));
    assert_eq!(dcf(&["fit", "--data", d, "--variant", "bogus"]).status.code(), Some(2));
    assert_eq!(dcf(&["fit", "--data", d, "--variant", "mma", "--kind", "l2"]).status.code(), Some(2));
    assert_eq!(dcf(&["fit", "--data", "/nonexistent.csv"]).status.code(), Some(3));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2,3\n4,x,6\n").unwrap();
    let o = dcf(&["fit", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 2"));
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{}").unwrap();
    assert_eq!(dcf(&["inspect", "--model", junk.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(dcf(&["--version"]).status.code(), Some(0));
}

#[test]
fn demo_writes_grids_without_fits() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcf(&["demo", "--out", dir.path().to_str().unwrap(), "--no-fits"]);
    assert!(o.status.success());
    for f in
        ["xsinx_lipschitz.csv", "xsinx_quadratic.csv", "xsinx_smooth.csv", "pw_linear_quadratic.csv", "summary.csv"]
    {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
}

#[test]
fn bench_accepts_a_json_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"source": {"synthetic": {"target": "normsq", "d": 2, "noise_sigma": 0.05}},
            "sizes": [60], "repetitions": 2, "estimators": ["ols", "knn"], "seed": 1, "test_size": 100}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = dcf(&["bench", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    for f in ["summary.csv", "cells.csv", "timings.csv"] {
        assert!(out.join(f).exists());
    }
}
