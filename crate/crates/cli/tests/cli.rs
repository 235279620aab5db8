//! Runs the `mfpmp` binary on small configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const E: f64 = std::f64::consts::E;

fn mfpmp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfpmp")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn benchmark(atoms: &str, control: &str) -> String {
    format!(
        "[model]\nkind = \"scalar-benchmark\"\n\
         [initial]\nkind = \"atoms\"\natoms = {atoms}\n\
         [time]\nsteps = 200\n\
         [control]\n{control}\n"
    )
}

/// Data rows of a CSV as floats.
fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_closed_form_moments() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), &benchmark("[[2.0, 1.0]]", "kind = \"constant\"\nvalue = [-1.0]"));
    let out = mfpmp(tmp.path(), &["simulate", "--out", "sim"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let moments = rows(&tmp.path().join("sim/moments.csv"));
    assert_eq!(moments.len(), 201);
    let last = moments.last().unwrap();
    // t, mass, mean, second moment of e·δ₁.
    assert!((last[0] - 1.0).abs() < 1e-12);
    assert!((last[1] - E).abs() < 1e-9);
    assert!((last[2] - 1.0).abs() < 1e-9);
    assert!((last[3] - E).abs() < 1e-9);
    for name in ["trajectory.csv", "mass.csv", "control.csv", "config.toml"] {
        assert!(tmp.path().join("sim").join(name).exists(), "{name} missing");
    }
}

#[test]
fn zero_source_keeps_mass_constant() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "[model]\nkind = \"linear\"\ndim = 2\nmatrix = [0.0, 1.0, -1.0, 0.0]\nrate = 0.0\n\
         [initial]\nkind = \"atoms\"\natoms = [[1.0, 0.0, 0.7], [0.0, 2.0, 0.6]]\n",
    );
    let out = mfpmp(tmp.path(), &["simulate", "--out", "sim"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for row in rows(&tmp.path().join("sim/mass.csv")) {
        assert!((row[1] - 1.3).abs() < 1e-13);
    }
}

#[test]
fn missing_initial_csv_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "[model]\nkind = \"scalar-benchmark\"\n[initial]\nkind = \"csv\"\npath = \"nowhere.csv\"\n",
    );
    let out = mfpmp(tmp.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "sed = 3\n[model]\nkind = \"scalar-benchmark\"\n[initial]\nkind = \"atoms\"\natoms = [[0.0, 1.0]]\n",
    );
    assert_eq!(mfpmp(tmp.path(), &["simulate"]).status.code(), Some(2));
}

#[test]
fn every_check_suite_passes_on_the_benchmark() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), &benchmark("[[0.5, 0.7], [2.5, 0.6]]", "kind = \"constant\"\nvalue = [0.3]"));
    for suite in ["derivatives", "gradient", "weak-form", "hamiltonian-equivalence", "lipschitz-beta"] {
        let out = mfpmp(tmp.path(), &["check", suite, "--out", "chk"]);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert_eq!(out.status.code(), Some(0), "{suite}:\n{stdout}");
        assert!(!stdout.contains("FAIL"), "{suite}:\n{stdout}");
    }
}

#[test]
fn unknown_suite_is_rejected() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), &benchmark("[[2.0, 1.0]]", ""));
    assert!(!mfpmp(tmp.path(), &["check", "everything"]).status.success());
}

#[test]
fn optimize_finds_the_benchmark_bangs() {
    for (atoms, bang, cost) in [("[[2.0, 1.0]]", -1.0, E / 2.0), ("[[0.0, 0.5], [4.0, 0.5]]", 1.0, 13.0 / (2.0 * E))] {
        let tmp = TempDir::new().unwrap();
        write_config(tmp.path(), &benchmark(atoms, "kind = \"optimize\""));
        let out = mfpmp(tmp.path(), &["optimize", "--out", "opt"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let report = report(&tmp.path().join("opt"));
        assert!((report["final_cost"].as_f64().unwrap() - cost).abs() < 1e-3);
        assert!(report["final_control"].as_array().unwrap().iter().all(|u| u.as_f64() == Some(bang)));
        for row in rows(&tmp.path().join("opt/control.csv")) {
            assert_eq!(row[1], bang);
        }
        for name in ["costates.csv", "adjoint.csv", "trajectory.csv", "moments.csv"] {
            assert!(tmp.path().join("opt").join(name).exists(), "{name} missing");
        }
    }
}

#[test]
fn zero_cost_converges_immediately() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "[model]\nkind = \"scalar-benchmark\"\ncost = { kind = \"zero\" }\n\
         [initial]\nkind = \"atoms\"\natoms = [[2.0, 1.0]]\n[control]\nkind = \"optimize\"\n",
    );
    let out = mfpmp(tmp.path(), &["optimize", "--out", "opt"]);
    assert_eq!(out.status.code(), Some(0));
    let report = report(&tmp.path().join("opt"));
    assert_eq!(report["termination"], "converged");
    assert_eq!(report["iterations"].as_array().unwrap().len(), 1);
    assert_eq!(report["final_cost"].as_f64(), Some(0.0));
}

#[test]
fn iteration_cap_exits_with_status_four() {
    let tmp = TempDir::new().unwrap();
    let body = benchmark("[[0.0, 0.5], [4.0, 0.5]]", "kind = \"optimize\"")
        + "[optimizer]\nmethod = \"projected-gradient\"\nmax_iters = 1\nstep = 1e-3\ncompare_candidates = false\n";
    write_config(tmp.path(), &body);
    let out = mfpmp(tmp.path(), &["optimize", "--out", "opt"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(tmp.path().join("opt/report.json").exists());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("density.csv"), "x_0,weight\n-1.0,0.2\n0.0,0.5\n1.5,0.3\n").unwrap();
    write_config(
        tmp.path(),
        "seed = 11\n[model]\nkind = \"opinion\"\ninteraction = { kind = \"gaussian\", strength = 1.0, width = 1.0 }\n\
         influence = { kind = \"affinity\", strength = 0.3, width = 1.0 }\ncontrol_bound = 0.5\n\
         cost = { kind = \"center-of-mass\", target = [0.5], scale = 1.0 }\n\
         [initial]\nkind = \"sample\"\npath = \"density.csv\"\ncount = 20\ntotal_mass = 1.5\n\
         [time]\nsteps = 50\n[control]\nkind = \"optimize\"\n\
         [optimizer]\nmethod = \"projected-gradient\"\nmax_iters = 5\n",
    );
    let first = mfpmp(tmp.path(), &["optimize", "--out", "a"]);
    assert!(first.status.code().is_some_and(|c| c == 0 || c == 4));

    // The echo carries absolute paths and the resolved seed, so it runs from anywhere.
    let elsewhere = TempDir::new().unwrap();
    let echoed = tmp.path().join("a/config.toml");
    let again = mfpmp(elsewhere.path(), &["optimize", "--config", echoed.to_str().unwrap(), "--out", "b"]);
    assert_eq!(first.status.code(), again.status.code());
    for name in ["trajectory.csv", "control.csv", "costates.csv"] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(elsewhere.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn seed_controls_sampled_initial_data() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("density.csv"), "x_0,weight\n-2.0,1.0\n0.0,1.0\n1.0,2.0\n3.0,0.5\n").unwrap();
    write_config(
        tmp.path(),
        "seed = 1\n[model]\nkind = \"scalar-benchmark\"\n\
         [initial]\nkind = \"sample\"\npath = \"density.csv\"\ncount = 30\ntotal_mass = 1.0\n\
         [time]\nsteps = 10\n",
    );
    let trajectory = |out: &str, seed: &str| {
        let status = mfpmp(tmp.path(), &["simulate", "--out", out, "--seed", seed]).status;
        assert!(status.success());
        fs::read(tmp.path().join(out).join("trajectory.csv")).unwrap()
    };
    let a = trajectory("a", "7");
    assert!(a == trajectory("b", "7"));
    assert!(a != trajectory("c", "8"));
}
