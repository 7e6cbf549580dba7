use std::path::Path;
use std::process::{Command, Output};

fn acx(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acx"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to launch acx")
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("stdout is JSON")
}

#[test]
fn simulate_fit_and_test_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = acx(
        &[
            "simulate",
            "--scenario",
            "s1_prime",
            "--n",
            "300",
            "--out",
            "s.csv",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = acx(
        &[
            "fit",
            "--model",
            "fdarx:1",
            "--data",
            "s.csv",
            "--trace",
            "trace.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let fit = json(&out.stdout);
    assert_eq!(fit["fit"]["theta_hat"].as_array().unwrap().len(), 6);
    assert_eq!(fit["n"], 300);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,fhat,hhat,qhat"));
    assert_eq!(trace.lines().count(), 301);

    let out = acx(
        &[
            "test",
            "--model",
            "fdarx:1",
            "--data",
            "s.csv",
            "--components",
            "4,5",
            "--draws",
            "2000",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let w = json(&out.stdout);
    assert_eq!(w["method"], "cone_mc");
    assert_eq!(w["d0"], 2);

    let out = acx(
        &[
            "test",
            "--model",
            "fdarx:1",
            "--data",
            "s.csv",
            "--components",
            "4,5",
            "--null-activity",
            "none",
        ],
        dir.path(),
    );
    assert_eq!(json(&out.stdout)["method"], "chisq");
}

#[test]
fn simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = acx(
            &[
                "simulate",
                "--scenario",
                "s0",
                "--n",
                "100",
                "--seed",
                "9",
                "--out",
                name,
            ],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn select_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    acx(
        &[
            "simulate",
            "--scenario",
            "s1_star",
            "--n",
            "400",
            "--out",
            "s.csv",
        ],
        dir.path(),
    );
    let out = acx(
        &[
            "select",
            "--data",
            "s.csv",
            "--q-max",
            "3",
            "--penalty",
            "bic",
            "--penalty",
            "hqc(5)",
            "--out-dir",
            "sel",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = json(&out.stdout);
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert!(dir.path().join("sel/selection_bic.csv").is_file());
    assert!(dir.path().join("sel/selection_hqc_5.csv").is_file());
}

#[test]
fn estimation_study_outputs_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "study",
        "estimation",
        "--scenario",
        "s0",
        "--reps",
        "4",
        "--sample-sizes",
        "100",
    ];
    for (threads, out_dir) in [("1", "one"), ("3", "three")] {
        let mut args = base.to_vec();
        args.extend(["--threads", threads, "--out-dir", out_dir]);
        let out = acx(&args, dir.path());
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in ["report.json", "table1.csv", "estimates.csv", "timing.json"] {
        assert!(dir.path().join("one").join(f).is_file(), "missing {f}");
    }
    let a = std::fs::read(dir.path().join("one/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("three/report.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn selection_study_layout() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"scenarios": [
        {"id": "a", "model": {"family": "fdarx", "orders": [1], "d_x": 1},
         "theta": [0.2, 0.3, 0.5, 0.2, 0.5, 0.3], "sample_sizes": [150], "reps": 2, "seed": 1,
         "selection": {"q_max": 2, "penalties": ["bic", "hqc(2)"], "starts": 1}},
        {"id": "b", "model": {"family": "fdarx", "orders": [0], "d_x": 1},
         "theta": [0.2, 0.3, 0.5, 0.2], "sample_sizes": [150], "reps": 2, "seed": 2,
         "selection": {"q_max": 2, "penalties": ["bic"], "starts": 1}}
    ]}"#;
    std::fs::write(dir.path().join("cfg.json"), config).unwrap();
    let out = acx(
        &[
            "study",
            "selection",
            "--config",
            "cfg.json",
            "--out-dir",
            "res",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("res/a/selection.csv")).unwrap();
    assert!(csv.starts_with("n,penalty,avg_order,freq"));
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("res/b/selection.csv").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = acx(
        &[
            "study",
            "estimation",
            "--scenario",
            "nope",
            "--out-dir",
            "x",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let out = acx(
        &[
            "study",
            "estimation",
            "--config",
            "bad.json",
            "--out-dir",
            "x",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    let out = acx(
        &["fit", "--model", "nosuch:1", "--data", "missing.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    let out = acx(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
