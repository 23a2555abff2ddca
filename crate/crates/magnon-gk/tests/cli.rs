use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_magnon-gk");

fn run(dir: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(BIN);
    c.current_dir(dir).args(args);
    if let Some(t) = threads {
        c.env("MAGNON_GK_THREADS", t);
    }
    c.output().expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr_json(o: &Output) -> Value {
    let s = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(s.lines().last().expect("stderr line")).expect("stderr JSON")
}

fn read_csv(p: &Path) -> Vec<[f64; 3]> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            [0, 1, 2].map(|i| rec[i].parse().unwrap())
        })
        .collect()
}

fn all_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    for e in walk(dir) {
        out.push((e.strip_prefix(dir).unwrap().display().to_string(), fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v = vec![];
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

const MICRO_SPEC: &str = r#"spec={"d":1,"dstar":2,"n":64,"b":1.0,"gamma":1.0,"charge":"uniform","coords":"position"}"#;
const MICRO_ENS: &str = r#"ensemble={"kind":"microcanonical","e":1.0}"#;

#[test]
fn simulate_minimal_writes_files_with_small_continuity_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &["simulate", "--out", "o", "--n", "8", "--t-end", "1", "--n-traj", "4", "--set", "options.tracking=per-bond"],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert!(s["summary"]["max_continuity_residual"].as_f64().unwrap() <= 1e-9);
    let meta: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["schema_version"], 1);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(walk(&tmp.path().join("o/trajectories")).len(), 4);
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (x, y) = (all_bytes(a), all_bytes(b));
    assert_eq!(x.len(), y.len());
    for ((na, ba), (nb, bb)) in x.iter().zip(&y) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs");
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        let o = run(d, &["simulate", "--out", "o", "--seed", "11", "--n-traj", "6", "--t-end", "2"], None);
        assert!(o.status.success());
        let o = run(d, &["correlate", "--out", "o"], None);
        assert!(o.status.success());
    }
    assert_same_tree(&a.path().join("o"), &b.path().join("o"));
}

#[test]
fn thread_count_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, t) in [(a.path(), "1"), (b.path(), "4")] {
        let o = run(d, &["simulate", "--out", "o", "--n-traj", "100", "--t-end", "2", "--seed", "5"], Some(t));
        assert!(o.status.success());
    }
    assert_same_tree(&a.path().join("o"), &b.path().join("o"));
}

#[test]
fn canonical_correlation_at_zero_is_inverse_beta_squared() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &["simulate", "--out", "o", "--n", "32", "--n-traj", "200", "--t-end", "4", "--set", r#"ensemble={"kind":"canonical","beta":2.0}"#],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(tmp.path(), &["correlate", "--out", "o"], None);
    assert!(o.status.success());
    let rows = read_csv(&tmp.path().join("o/correlation.csv"));
    let [t, v, se] = rows[0];
    assert_eq!(t, 0.0);
    assert!((v - 0.25).abs() <= 3.0 * se, "D(0) = {v} ± {se}");
}

#[test]
fn micro_correlation_matches_closed_form_in_window() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &["simulate", "--out", "o", "--n-traj", "60", "--t-end", "16", "--set", MICRO_SPEC, "--set", MICRO_ENS],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(tmp.path(), &["correlate", "--out", "o", "--compare", "--plot"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    let cmp = &s["summary"]["comparison"];
    assert!(cmp["points"].as_u64().unwrap() > 10);
    assert!(cmp["window_max_z"].as_f64().unwrap() <= 3.0);
    assert!(tmp.path().join("o/correlation.svg").exists());
}

#[test]
fn empty_trajectory_dir_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["simulate", "--out", "o", "--n-traj", "2", "--t-end", "1"], None);
    assert!(o.status.success());
    for p in walk(&tmp.path().join("o/trajectories")) {
        fs::remove_file(p).unwrap();
    }
    let o = run(tmp.path(), &["correlate", "--out", "o"], None);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["code"], "empty_ensemble");
    assert_eq!(e["context"]["command"], "correlate");

    fs::create_dir(tmp.path().join("blank")).unwrap();
    let o = run(tmp.path(), &["correlate", "--input", "blank", "--out", "x"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_json(&o)["message"].is_string());
}

#[test]
fn invalid_config_is_rejected_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["simulate", "--out", "o", "--n", "2"], None);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["code"], "invalid_spec");
    assert!(!tmp.path().join("o/meta.json").exists());

    fs::write(tmp.path().join("bad.json"), r#"{"n_trajectories": 3}"#).unwrap();
    let o = run(tmp.path(), &["simulate", "--config", "bad.json"], None);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["code"], "parse");
}

#[test]
fn config_file_and_flags_compose() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"n_traj": 3, "t_end": 1.0, "seed": 9}"#).unwrap();
    let o = run(tmp.path(), &["simulate", "--config", "c.json", "--out", "o", "--n-traj", "2"], None);
    assert!(o.status.success());
    let meta: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["n_traj"], 2);
    assert_eq!(meta["config"]["seed"], 9);
    assert_eq!(meta["config"]["t_end"], 1.0);
}

fn closedform_slope(args: &[&str]) -> f64 {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = vec!["closedform", "--out", "o"];
    a.extend_from_slice(args);
    let o = run(tmp.path(), &a, None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&tmp.path().join("o/series.csv"));
    assert!(rows.iter().all(|r| r[2] >= 0.0 && r[2] < 1e-3 * r[1].abs()));
    let fit: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/fit.json")).unwrap()).unwrap();
    fit["fit"]["slope"].as_f64().unwrap()
}

#[test]
fn closedform_uniform_micro_quarter_slope() {
    let s = closedform_slope(&["--b", "1", "--gamma", "1", "--plot"]);
    assert!((s - 0.25).abs() <= 0.03, "slope {s}");
}

#[test]
fn closedform_alternate_canonical_half_slope() {
    let s = closedform_slope(&[
        "--b",
        "1",
        "--gamma",
        "0.5",
        "--set",
        r#"closedform.kind={"quantity":"kappa","setting":{"kind":"canonical","variant":"ii"}}"#,
    ]);
    assert!((s - 0.5).abs() <= 0.03, "slope {s}");
}

#[test]
fn closedform_field_free_half_slope() {
    let s = closedform_slope(&["--b", "0", "--gamma", "1"]);
    assert!((s - 0.5).abs() <= 0.03, "slope {s}");
}

#[test]
fn certify_default_matrix_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["certify", "--out", "o"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["summary"]["cases"], 72);
    assert!(s["summary"]["max_residual"].as_f64().unwrap() <= 1e-10);
    assert_eq!(s["summary"]["ensemble_moment"]["pass"], true);
    let r: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/certification.json")).unwrap()).unwrap();
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["resolvent"]["all_pass"], true);
}

#[test]
fn certify_perturbed_kernel_fails_with_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["certify", "--out", "o", "--perturb", "1e-6", "--set", "certify.resolvent.lambdas=[1.0]"], None);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["code"], "tolerance_exceeded");
    let failing = e["context"]["summary"]["failing"].as_array().unwrap();
    assert!(!failing.is_empty());
    assert!(failing.iter().all(|f| f["residual"].as_f64().unwrap() > 1e-10));
}

#[test]
fn sample_micro_moments_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = MICRO_SPEC.replace("\"n\":64", "\"n\":9");
    let o = run(tmp.path(), &["sample", "--out", "o", "--set", &spec, "--set", MICRO_ENS], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["summary"]["errors_decreasing"], serde_json::json!([true, true]));
}

#[test]
fn sample_canonical_variances_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["sample", "--out", "o", "--set", "sample.samples=400"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
