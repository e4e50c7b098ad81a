use std::process::{Command, Output};

use qiopa::cli::{ReportRow, CSV_HEADER};

fn qiopa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qiopa"))
        .args(args)
        .env_remove("QOPA_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn column<'a>(csv: &'a str, row: usize, name: &str) -> &'a str {
    let idx = CSV_HEADER.split(',').position(|h| h == name).unwrap();
    csv.lines().nth(row).unwrap().split(',').nth(idx).unwrap()
}

#[test]
fn single_fidelity_row() {
    let csv = stdout(&qiopa(&[
        "fidelity", "--qubit", "H", "--g", "0.1", "--order", "first",
    ]));
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(column(&csv, 1, "F"), "0.833333333333");
    assert_eq!(column(&csv, 1, "F_star"), "0.666666666667");
    assert_eq!(column(&csv, 1, "R"), "2");
}

#[test]
fn json_round_trip() {
    let args = ["fidelity", "--qubit", "circ-left", "--g", "0.05"];
    let json = stdout(&qiopa(&[&args[..], &["--format", "json"]].concat()));
    let rows: Vec<ReportRow> = serde_json::from_str(&json).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(serde_json::to_string_pretty(&rows).unwrap() + "\n", json);
    let csv = stdout(&qiopa(&args));
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(
            column(&csv, i + 1, "F").parse::<f64>().unwrap(),
            row.f.unwrap()
        );
        assert_eq!(
            column(&csv, i + 1, "S1").parse::<f64>().unwrap(),
            row.s1.unwrap()
        );
    }
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no/such/dir/out.csv");
    for args in [
        vec![
            "fidelity",
            "--qubit",
            "H",
            "--g",
            "0.1",
            "--output",
            missing.to_str().unwrap(),
        ],
        vec!["simulate", "--qubit", "H", "--g", "0.1", "--trials", "0"],
        vec!["fidelity", "--qubit", "H", "--g", "5"],
        vec!["fidelity", "--qubit", "2,0,0,0", "--g", "0.1"],
        vec!["sweep-gain", "--qubit", "H"],
        vec![
            "zscan",
            "--qubit",
            "H",
            "--g",
            "0.1",
            "--z-start",
            "1",
            "--z-stop",
            "0",
        ],
        vec!["frobnicate"],
    ] {
        let out = qiopa(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# cloning run\nqubit = diag\ng = 0.05\norder = first\nper_mode = 6\ntotal = 11\n",
    )
    .unwrap();
    let from_file = stdout(&qiopa(&["fidelity", "--config", cfg.to_str().unwrap()]));
    assert_eq!(from_file.lines().count(), 2);
    assert_eq!(column(&from_file, 1, "qubit"), "diag");
    let overridden = stdout(&qiopa(&[
        "fidelity",
        "--config",
        cfg.to_str().unwrap(),
        "--g",
        "0.02",
    ]));
    assert_eq!(column(&overridden, 1, "g"), "0.02");

    std::fs::write(&cfg, "qubit = H\ng = 0.1\ncolour = blue\n").unwrap();
    assert!(!qiopa(&["fidelity", "--config", cfg.to_str().unwrap()])
        .status
        .success());
}

#[test]
fn written_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let args = [
        "sweep-gain",
        "--qubit",
        "H",
        "--gains",
        "0.1,0.001,0.01,0.01",
    ];
    let out = qiopa(&[&args[..], &["--output", path.to_str().unwrap()]].concat());
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, stdout(&qiopa(&args)));
    let gains: Vec<f64> = (1..=3)
        .map(|i| column(&text, i, "g").parse().unwrap())
        .collect();
    assert_eq!(gains, vec![0.001, 0.01, 0.1]);
    let f: Vec<f64> = (1..=3)
        .map(|i| column(&text, i, "F").parse().unwrap())
        .collect();
    assert!(f[0] > f[1] && f[1] > f[2]);
    assert!((f[0] - 5.0 / 6.0).abs() < 1e-6);
}

#[test]
fn simulation_is_byte_identical() {
    let args = [
        "simulate", "--qubit", "H", "--g", "0.1", "--trials", "200000", "--seed", "9",
    ];
    let a = stdout(&qiopa(&args));
    assert_eq!(a, stdout(&qiopa(&args)));
    assert_eq!(a.lines().count(), 3);
    assert_eq!(column(&a, 1, "order"), "mc");
    assert_eq!(column(&a, 2, "order"), "oracle");

    let env = Command::new(env!("CARGO_BIN_EXE_qiopa"))
        .args(&args[..args.len() - 2])
        .env("QOPA_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(stdout(&env), a);
}

#[test]
fn single_trial_is_unstable() {
    let out = qiopa(&["simulate", "--qubit", "H", "--g", "0.1", "--trials", "1"]);
    let csv = stdout(&out);
    let c1: u64 = column(&csv, 1, "C1").parse().unwrap();
    let c2: u64 = column(&csv, 1, "C2").parse().unwrap();
    assert!(c1 <= 1 && c2 <= 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unstable"));
}

#[test]
fn universality_reference_qubits_only() {
    let csv = stdout(&qiopa(&["universality", "--g", "0.1", "--count", "0"]));
    let labels: Vec<&str> = (1..=4).map(|i| column(&csv, i, "qubit")).collect();
    assert_eq!(labels, ["H", "diag", "circ-left", "max_deviation"]);
    let dev: f64 = column(&csv, 4, "F").parse().unwrap();
    assert!(dev <= 1e-10);
}

#[test]
fn zscan_reports_fit() {
    let csv = stdout(&qiopa(&[
        "zscan",
        "--qubit",
        "diag",
        "--g",
        "0.1",
        "--trials",
        "50000",
        "--z-start",
        "-6",
        "--z-stop",
        "6",
        "--z0",
        "1",
        "--sigma-z",
        "1.5",
        "--seed",
        "5",
    ]));
    assert_eq!(csv.lines().count(), 1 + 21 + 4);
    assert_eq!(column(&csv, 22, "order"), "fit_c1");
    let c: f64 = column(&csv, 22, "fit_c").parse().unwrap();
    let sigma: f64 = column(&csv, 23, "fit_c").parse().unwrap();
    assert!((c - 1.0).abs() <= 3.0 * sigma, "{c} +- {sigma}");
}

#[test]
fn zero_gain_rows_are_flagged() {
    let out = qiopa(&["fidelity", "--qubit", "H", "--g", "0"]);
    let csv = stdout(&out);
    assert_eq!(column(&csv, 1, "F"), "");
    assert!(String::from_utf8_lossy(&out.stderr).contains("no amplification"));
}
