use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rfsphase::cli::pipeline::{validation_suite_with, Diagram};
use rfsphase::eigensolver::{SolverOptions, StartCorner};
use rfsphase::models::ParametricHamiltonian;
use rfsphase::qstate::uhlmann_fidelity;
use rfsphase::rfsfield::{cyclic_colormap, ParameterLattice};
use rfsphase::sparse::Csr;
use serde_json::{json, Value};

fn rfs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfs")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn annni_config() -> Value {
    json!({
        "model": {"kind": "annni", "sites": 8},
        "region": {"lambda1": [0.01, 1.5], "lambda2": [0.01, 1.5]},
        "grid": 8,
        "rdm_sites": 2
    })
}

fn matrix(rows: &[[f64; 2]; 2]) -> Value {
    json!([rows[0], rows[1]])
}

#[test]
fn phase_diagram_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &annni_config());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = rfs(&["phase-diagram", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["field.csv", "angle.ppm", "streamlines.svg", "manifest.json"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(a.join("field.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);
    assert_eq!(csv, std::fs::read_to_string(b.join("field.csv")).unwrap());
    let svg = std::fs::read_to_string(a.join("streamlines.svg")).unwrap();
    assert!(svg.contains("class=\"ising\""));
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "phase-diagram");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    for f in ["field.csv", "angle.ppm", "streamlines.svg"] {
        assert_eq!(manifest["outputs"][f].as_str().unwrap().len(), 64);
    }
    let ppm = std::fs::read(a.join("angle.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n15 15\n255\n"));
}

#[test]
fn two_state_fixture_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = annni_config();
    cfg["order_param"] = json!({"fixture": {
        "plus": [matrix(&[[1.0, 0.0], [0.0, 0.0]])],
        "minus": [matrix(&[[0.5, 0.5], [0.5, 0.5]])]
    }});
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let out = dir.path().join("op");
    let o = rfs(&["order-param", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--gs-form"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out.join("observable.json"));
    assert_eq!(v["mode"], "two_state");
    let s = 2.0 * 3f64.sqrt();
    let expect = [[3.0 / s, -1.0 / s], [-1.0 / s, -1.0 / s]];
    for i in 0..2 {
        for j in 0..2 {
            let re = v["matrix"][2 * i + j][0].as_f64().unwrap();
            let im = v["matrix"][2 * i + j][1].as_f64().unwrap();
            assert!((re - expect[i][j]).abs() < 1e-10 && im.abs() < 1e-10);
        }
    }
    assert_eq!(v["order"], json!(2));
    assert!((v["frobenius_norm"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let ev = v["eigenvalues"].as_array().unwrap();
    assert!(ev[0].as_f64().unwrap() < 0.0 && ev[1].as_f64().unwrap() > 0.0);
    assert!(v["projectors"][0]["alpha"].is_number());
    let labels: Vec<&str> = v["pauli_terms"].as_array().unwrap().iter().map(|t| t["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["Z", "X", "I"]);
}

#[test]
fn saved_observable_feeds_fss() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = annni_config();
    cfg["model"]["sites"] = json!(6);
    cfg["order_param"] = json!({"fixture": {
        "plus": [matrix(&[[0.9, 0.0], [0.0, 0.1]])],
        "minus": [matrix(&[[0.5, 0.4], [0.4, 0.5]])]
    }});
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let op = dir.path().join("op");
    let o = rfs(&["order-param", "--config", path.to_str().unwrap(), "--out", op.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    cfg["rdm_sites"] = json!(1);
    cfg["fss"] = json!({
        "h_values": {"start": 0.8, "stop": 1.2, "count": 5},
        "lengths": [4, 6, 8],
        "observable_file": "op/observable.json"
    });
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let out = dir.path().join("fss");
    let o = rfs(&["fss", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("fss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
}

#[test]
fn identical_phases_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = annni_config();
    let same = [matrix(&[[0.7, 0.1], [0.1, 0.3]]), matrix(&[[0.4, 0.0], [0.0, 0.6]])];
    cfg["order_param"] = json!({"fixture": {"plus": same, "minus": same}});
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let out = dir.path().join("op");
    let o = rfs(&["order-param", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(err["error"]["kind"], "not_indefinite");
    assert!(err["error"]["message"].as_str().unwrap().contains("identical"));
}

fn synthetic_fss_csv(lengths: &[usize]) -> String {
    let mut s = String::from("L,h,expectation\n");
    for &l in lengths {
        let lf = l as f64;
        let g = lf * (1.0 + lf.powf(-0.5));
        for i in 0..11 {
            let h = 0.5 + 0.1 * i as f64;
            s.push_str(&format!("{l},{h},{}\n", g * h));
        }
    }
    s
}

#[test]
fn fss_synthetic_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let lengths: Vec<usize> = (1..=8).map(|k| 8 * k).collect();
    std::fs::write(dir.path().join("curves.csv"), synthetic_fss_csv(&lengths)).unwrap();
    let mut cfg = annni_config();
    cfg["fss"] = json!({"kappa": 0.001, "data": "curves.csv"});
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let out = dir.path().join("fss");
    let o = rfs(&["fss", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = read_json(&out.join("fss_fit.json"));
    let get = |k: &str| fit[k].as_f64().unwrap();
    assert!((get("b_double_prime") - 1.0).abs() < 0.01);
    assert!((get("theta") - 0.5).abs() < 0.005);
    assert!((get("slope") - 1.0).abs() < 0.005);
    assert!((get("nu_estimate") - 1.0).abs() < 0.01);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["details"]["kappa"], json!(0.001));
    assert_eq!(manifest["details"]["lengths"], json!(lengths));
}

#[test]
fn fss_single_length_is_singular() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = annni_config();
    cfg["fss"] = json!({
        "kappa": 0.001,
        "h_values": [0.8, 0.9, 1.0, 1.1, 1.2],
        "lengths": [8],
        "observable": [[0.5, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.5]]
    });
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let out = dir.path().join("fss");
    let o = rfs(&["fss", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(err["error"]["kind"], "singular_fit");
}

#[test]
fn fss_manifest_records_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = annni_config();
    let h = [0.8, 0.9, 1.0, 1.1, 1.2];
    cfg["fss"] = json!({
        "kappa": 0.001,
        "h_values": h,
        "lengths": [6, 8, 10],
        "observable": [[0.0, 0.0, 0.0, 0.0], [0.0, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.0], [0.0, 0.0, 0.0, 0.0]]
    });
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let out = dir.path().join("fss");
    let o = rfs(&["fss", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["details"]["kappa"], json!(0.001));
    assert_eq!(manifest["details"]["h_values"], json!(h));
    assert_eq!(manifest["config"]["fss"]["h_values"], json!(h));
    let csv = std::fs::read_to_string(out.join("fss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = annni_config();
    cfg["grid"] = json!(2);
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let o = rfs(&["phase-diagram", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = rfs(&["phase-diagram", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = rfs(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    let mut cfg = annni_config();
    cfg["unknown_key"] = json!(1);
    let path = write_config(dir.path(), "cfg2.json", &cfg);
    let o = rfs(&["phase-diagram", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = rfs(&["validate", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().next().unwrap().contains("tolerance"));
    let report = read_json(&dir.path().join("validate.json"));
    for c in report["checks"].as_array().unwrap() {
        assert!(c["tolerance"].is_number() && c["measured"].is_number());
        assert_eq!(c["passed"], json!(true));
    }
}

#[test]
fn perturbed_fidelity_fails_symmetry() {
    let skewed = |a: &rfsphase::qstate::DensityMatrix, b: &rfsphase::qstate::DensityMatrix| {
        uhlmann_fidelity(a, b).map(|f| f * (1.0 - 1e-3 * a.matrix[(0, 0)].re))
    };
    let checks = validation_suite_with(0, &skewed);
    let sym = checks.iter().find(|c| c.name == "fidelity_symmetry").unwrap();
    assert!(!sym.passed);
}

#[test]
fn constant_model_has_black_raster() {
    let dim = 8;
    let h0 = Csr::from_triplets(dim, (0..dim).map(|i| (i, i, -(i as f64))).collect());
    let zero = Csr::zeros(dim);
    let model = ParametricHamiltonian::new(h0, zero.clone(), zero, ["a", "b"], 3);
    let lattice = ParameterLattice::new([0.0, 0.0], [0.1, 0.1], 5, 5);
    let diag = Diagram::from_model(model, lattice, StartCorner::default(), &SolverOptions::default(), 1, false).unwrap();
    assert!(diag.field.angle.iter().all(|a| a.is_none()));
    assert!(cyclic_colormap(&diag.field.angle).iter().all(|c| *c == [0, 0, 0]));
}
