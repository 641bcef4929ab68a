//! End-to-end runs of the `scatmom` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn scatmom(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scatmom"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("SCATMOM_THREADS", n.to_string()),
        None => cmd.env_remove("SCATMOM_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = scatmom(args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn sha256(p: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(p).unwrap()))
}

/// Simulates, scatters and fits a small MRW ensemble, returning every file
/// written with its digest.
fn pipeline(dir: &Path, threads: usize) -> Vec<(String, String)> {
    let csv = dir.join("mrw.csv");
    let run = |args: &[&str]| {
        let out = scatmom(args, Some(threads));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&[
        "simulate",
        "--family",
        "mrw",
        "--lambda2",
        "0.05",
        "--integral-scale",
        "8",
        "--length",
        "2048",
        "--realizations",
        "8",
        "--seed",
        "5",
        "--out",
        s(&csv),
    ]);
    run(&[
        "scatter",
        "--input",
        s(&csv),
        "--block-len",
        "2048",
        "--j",
        "6",
        "--summary",
        "--out-dir",
        s(&dir.join("scat")),
    ]);
    run(&[
        "fit",
        "--input",
        s(&csv),
        "--block-len",
        "2048",
        "--family",
        "mrw",
        "--integral-scale",
        "8",
        "--j",
        "3",
        "--n-sim",
        "32",
        "--seed",
        "2",
        "--out",
        s(&dir.join("fit.json")),
    ]);
    let mut files: Vec<PathBuf> = walk(dir);
    files.sort();
    files
        .iter()
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), sha256(p)))
        .collect()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let one = pipeline(a.path(), 1);
    let four = pipeline(b.path(), 4);
    assert!(one.len() >= 8, "{one:?}");
    assert_eq!(one, four);
}

#[test]
fn every_output_carries_a_matching_manifest() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("x.csv");
    ok(&[
        "simulate",
        "--family",
        "fbm",
        "--H",
        "0.5",
        "--length",
        "4096",
        "--seed",
        "7",
        "--out",
        s(&csv),
    ]);
    for file in [csv.clone(), dir.path().join("x.spec.json")] {
        let m = read_json(&PathBuf::from(format!("{}.manifest.json", file.display())));
        assert_eq!(m["command"], "simulate");
        assert_eq!(m["seed"], 7);
        assert_eq!(m["output_hash"], sha256(&file));
        assert!(m["tool_version"].is_string());
    }
    let again = dir.path().join("y.csv");
    ok(&[
        "simulate",
        "--family",
        "fbm",
        "--H",
        "0.5",
        "--length",
        "4096",
        "--seed",
        "7",
        "--out",
        s(&again),
    ]);
    assert_eq!(sha256(&csv), sha256(&again));
}

#[test]
fn usage_and_input_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("l.csv");
    let bad = scatmom(
        &[
            "simulate",
            "--family",
            "levy",
            "--alpha",
            "0.9",
            "--length",
            "64",
            "--out",
            s(&out),
        ],
        None,
    );
    assert_eq!(bad.status.code(), Some(2));
    assert!(!out.exists());

    let missing = dir.path().join("absent.csv");
    let r = scatmom(
        &[
            "scatter",
            "--input",
            s(&missing),
            "--j",
            "4",
            "--out-dir",
            s(dir.path()),
        ],
        None,
    );
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("absent.csv"));

    let r = scatmom(
        &["fit", "--input", s(&missing), "--family", "fbm", "--estimator", "bogus"],
        None,
    );
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn verify_bank_certificates_and_broken_phi() {
    let a = ok(&["verify-bank"]);
    let b = ok(&["verify-bank"]);
    assert_eq!(a.stdout, b.stdout);
    let report: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["phi_holds"], true);
    assert_eq!(report["vanishing_moments"], 4);
    assert!(report["lp_defect"].as_f64().unwrap() < 0.05);
    assert!(report["analyticity_ratio"].as_f64().unwrap() < 0.05);

    let broken = scatmom(&["verify-bank", "--phi", "allpass"], None);
    assert_eq!(broken.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&broken.stdout).unwrap();
    assert_eq!(report["phi_holds"], false);
    assert_eq!(report["pass"], false);
}

#[test]
fn scatter_reports_the_hurst_slope_of_fbm() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("fbm.csv");
    ok(&[
        "simulate",
        "--family",
        "fbm",
        "--H",
        "0.8",
        "--length",
        "1048576",
        "--seed",
        "3",
        "--out",
        s(&csv),
    ]);
    let out = dir.path().join("scat");
    ok(&[
        "scatter",
        "--input",
        s(&csv),
        "--order",
        "1",
        "--j",
        "13",
        "--fit-lo",
        "3",
        "--fit-hi",
        "10",
        "--out-dir",
        s(&out),
    ]);
    let slope = read_json(&out.join("fit.json"))["slope"].as_f64().unwrap();
    assert!((slope - 0.8).abs() < 0.03, "slope {slope}");
    for f in ["scattering.json", "scattering.csv", "normalized.csv", "curves.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
        assert!(out.join(format!("{f}.manifest.json")).is_file(), "{f} manifest missing");
    }
}

#[test]
fn fit_recovers_the_multifractal_intermittency() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("mrm.csv");
    ok(&[
        "simulate",
        "--family",
        "mrm-stationary",
        "--lambda2",
        "0.1",
        "--integral-scale",
        "10",
        "--length",
        "2048",
        "--realizations",
        "49",
        "--seed",
        "1",
        "--out",
        s(&csv),
    ]);
    let common = ["--input", s(&csv), "--block-len", "2048", "--family", "mrm-stationary"];
    let gmm = ok(&[
        &["fit"][..],
        &common,
        &["--j", "5", "--lo", "0.02", "--hi", "0.2", "--seed", "1001"],
    ]
    .concat());
    let gmm: Value = serde_json::from_slice(&gmm.stdout).unwrap();
    assert_eq!(gmm["estimator"], "gmm");
    let theta = gmm["theta_hat"].as_f64().unwrap();
    assert!((theta - 0.1).abs() < 6e-3, "GMM λ̂² {theta}");
    assert!(!gmm["objective_trace"].as_array().unwrap().is_empty());

    let lc = ok(&[&["fit"][..], &common, &["--estimator", "logcov"]].concat());
    let lc: Value = serde_json::from_slice(&lc.stdout).unwrap();
    let est = lc["fit"]["estimate"].as_f64().unwrap();
    assert!((est - 0.1).abs() < 9e-3, "log-cov λ̂² {est}");
}
