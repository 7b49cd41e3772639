//! Black-box tests of the command-line interface: exit codes, artifact
//! shapes, and the simulate -> fit pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_anorm")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("anorm-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_cfg(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p
}

const BASE_CFG: &str = r#"{
  "dims": [4, 3, 500],
  "mode-names": ["row", "col", "rep"],
  "simulate": {
    "mean": 2.0,
    "covariance": [ {"ar1": {"rho": 0.6}}, {"identity": null} ],
    "missing-fraction": 0.0
  },
  "sampler": {"iters": 100, "burn-in": 30, "thin": 2, "seed": 5, "chains": 1}
}"#;

#[test]
fn config_errors_exit_2() {
    let dir = workdir("cfg2");
    // unparseable config
    let bad = write_cfg(&dir, "{ not json");
    let out = run(&["simulate", "--config", bad.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    // all modes pinned to the identity
    let all_id = write_cfg(
        &dir,
        r#"{"dims": [2, 2, 4], "identity-modes": [1, 2],
            "sampler": {"iters": 10, "burn-in": 2, "thin": 1, "seed": 1, "chains": 1}}"#,
    );
    let simdir = dir.join("sim");
    let out = run(&[
        "simulate",
        "--config",
        all_id.to_str().unwrap(),
        "--out",
        simdir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&[
        "fit-bayes",
        "--data",
        simdir.join("data.tnsr").to_str().unwrap(),
        "--config",
        all_id.to_str().unwrap(),
        "--out",
        dir.join("b").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn data_errors_exit_3() {
    let dir = workdir("data3");
    // nonexistent data file
    let out = run(&[
        "fit-mle",
        "--data",
        dir.join("absent.tnsr").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    // corrupt payload
    let bad = dir.join("bad.tnsr");
    std::fs::write(&bad, "anorm-tensor v1\ndims: 2 2\nmissing: 0\npayload: text\n---\n1\n2\n3\n").unwrap();
    let out = run(&["fit-mle", "--data", bad.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_data_blocks_mle_with_exit_3() {
    let dir = workdir("mle-missing");
    let cfg = write_cfg(
        &dir,
        r#"{"dims": [3, 3, 10],
            "simulate": {"mean": 0.0, "missing-fraction": 0.2},
            "sampler": {"iters": 10, "burn-in": 2, "thin": 1, "seed": 2, "chains": 1}}"#,
    );
    let sim = dir.join("sim");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()])
        .status
        .success());
    // header records the exact masked-cell count: round(0.2 * 90)
    let data = std::fs::read_to_string(sim.join("data.tnsr")).unwrap();
    assert!(data.contains("missing: 18"), "header: {}", data.lines().nth(3).unwrap());
    let out = run(&[
        "fit-mle",
        "--data",
        sim.join("data.tnsr").to_str().unwrap(),
        "--out",
        dir.join("mle").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn numeric_failure_exits_4() {
    let dir = workdir("num4");
    // cells constant along mode 1 make its scatter rank one, so the
    // Cholesky inside the flip-flop update must fail
    let mut payload = String::from("anorm-tensor v1\ndims: 3 2 4\nmissing: 0\npayload: text\n---\n");
    for t in 0..4 {
        for j in 0..2 {
            for _i in 0..3 {
                payload.push_str(&format!("{}\n", (j + 2 * t) as f64));
            }
        }
    }
    let data = dir.join("thin.tnsr");
    std::fs::write(&data, payload).unwrap();
    let out = run(&["fit-mle", "--data", data.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simulate_then_fit_mle_recovers_correlations() {
    let dir = workdir("pipeline");
    let cfg = write_cfg(&dir, BASE_CFG);
    let sim = dir.join("sim");
    let mle = dir.join("mle");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()])
        .status
        .success());
    assert!(run(&[
        "fit-mle",
        "--data",
        sim.join("data.tnsr").to_str().unwrap(),
        "--out",
        mle.to_str().unwrap(),
    ])
    .status
    .success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(mle.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], serde_json::Value::Bool(true));
    // AR1(0.6) first off-diagonal, identity second mode
    let c0 = report["correlations"][0][0][1].as_f64().unwrap();
    assert!((c0 - 0.6).abs() < 0.05, "recovered correlation {c0}");
    let c1 = report["correlations"][1][0][1].as_f64().unwrap();
    assert!(c1.abs() < 0.05, "identity mode correlation {c1}");
    // likelihood trace is nondecreasing
    let trace = std::fs::read_to_string(mle.join("loglik_trace.csv")).unwrap();
    let values: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    for w in values.windows(2) {
        assert!(w[1] >= w[0] - 1e-9);
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn reduced_model_chain_omits_identity_components() {
    let dir = workdir("reduced");
    let cfg = write_cfg(
        &dir,
        r#"{
  "dims": [3, 3, 40],
  "mode-names": ["exp", "imp", "rep"],
  "identity-modes": [1],
  "simulate": {"mean": 0.0, "missing-fraction": 0.0},
  "sampler": {"iters": 60, "burn-in": 20, "thin": 2, "seed": 4, "chains": 1}
}"#,
    );
    let sim = dir.join("sim");
    let bayes = dir.join("bayes");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()])
        .status
        .success());
    assert!(run(&[
        "fit-bayes",
        "--data",
        sim.join("data.tnsr").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        bayes.to_str().unwrap(),
    ])
    .status
    .success());
    let states: serde_json::Value =
        serde_json::from_slice(&std::fs::read(bayes.join("chain-0/states.json")).unwrap()).unwrap();
    let first = &states[0]["comps"];
    assert!(first[0].is_null(), "identity mode should carry no matrix");
    assert!(first[1].is_array());
    // the ESS table lists gamma0 and only the estimated gamma_k
    let ess = std::fs::read_to_string(bayes.join("chain-0/ess.csv")).unwrap();
    assert!(ess.contains("gamma0,"));
    assert!(!ess.contains("gamma1,"));
    assert!(ess.contains("gamma2,"));

    // summarize emits labels from the data header's mode names
    let summ = dir.join("summ");
    assert!(run(&[
        "summarize",
        "--chain",
        bayes.join("chain-0").to_str().unwrap(),
        "--out",
        summ.to_str().unwrap(),
    ])
    .status
    .success());
    assert!(!summ.join("correlation-exp.csv").exists());
    let corr = std::fs::read_to_string(summ.join("correlation-imp.csv")).unwrap();
    assert!(corr.starts_with(",imp1,imp2,imp3"));
    // identity-truth data: eigenvalues of the mean correlation near one
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(summ.join("summary.json")).unwrap()).unwrap();
    for ev in report["modes"][0]["eigenvalues"].as_array().unwrap() {
        let v = ev.as_f64().unwrap();
        assert!((v - 1.0).abs() < 0.5, "eigenvalue {v}");
    }
    // rerun summarize: identical bytes (stable eigenvector signs)
    let summ2 = dir.join("summ2");
    assert!(run(&[
        "summarize",
        "--chain",
        bayes.join("chain-0").to_str().unwrap(),
        "--out",
        summ2.to_str().unwrap(),
    ])
    .status
    .success());
    assert_eq!(
        std::fs::read(summ.join("summary.json")).unwrap(),
        std::fs::read(summ2.join("summary.json")).unwrap()
    );
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn command_line_overrides_change_the_recorded_config_hash() {
    let dir = workdir("hash");
    let cfg = write_cfg(&dir, BASE_CFG);
    let sim = dir.join("sim");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()])
        .status
        .success());
    let data = sim.join("data.tnsr");
    for (tag, extra) in [("x", None), ("y", Some(["--iters", "90"]))] {
        let out_dir = dir.join(tag);
        let mut args = vec![
            "fit-bayes".to_string(),
            "--data".to_string(),
            data.to_str().unwrap().to_string(),
            "--config".to_string(),
            cfg.to_str().unwrap().to_string(),
            "--out".to_string(),
            out_dir.to_str().unwrap().to_string(),
        ];
        if let Some(e) = &extra {
            args.extend(e.iter().map(|s| s.to_string()));
        }
        let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        assert!(run(&refs).status.success());
    }
    let meta = |tag: &str| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(dir.join(tag).join("chain-0/meta.json")).unwrap())
            .unwrap()
    };
    assert_ne!(meta("x")["config_hash"], meta("y")["config_hash"]);
    assert_eq!(meta("x")["rng_algorithm"], "chacha12");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn parallel_chains_differ_but_share_the_seed() {
    let dir = workdir("chains");
    let cfg = write_cfg(&dir, BASE_CFG);
    let sim = dir.join("sim");
    let bayes = dir.join("bayes");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()])
        .status
        .success());
    assert!(run(&[
        "fit-bayes",
        "--data",
        sim.join("data.tnsr").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        bayes.to_str().unwrap(),
        "--chains",
        "2",
    ])
    .status
    .success());
    let t0 = std::fs::read(bayes.join("chain-0/trace.csv")).unwrap();
    let t1 = std::fs::read(bayes.join("chain-1/trace.csv")).unwrap();
    assert_ne!(t0, t1, "chains should explore different randomness");
    let meta = |c: &str| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(bayes.join(c).join("meta.json")).unwrap()).unwrap()
    };
    assert_eq!(meta("chain-0")["seed"], meta("chain-1")["seed"]);
    assert_ne!(meta("chain-0")["stream"], meta("chain-1")["stream"]);
    std::fs::remove_dir_all(&dir).unwrap();
}
