use std::path::Path;
use std::process::{Command, Output};

use cascade_core::io::save_operator;
use cascade_core::mourre::{conjugate_operator_harmonic, transporter_h0};
use cascade_core::{BasisKind, BasisModel, C64};

fn cascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade")).args(args).env("CASCADE_THREADS", "2").output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const SMALL: &str = r#"
name = "small"
model = "HarmonicUniversal"
dim = 96
r_values = [1.0]
output_dir = "runs"
seed_mode = 1

[potential]
k = 1
vk = [2.0, 0.0]

[window]
a = -0.5
b = 0.5
delta = 1.3

[evolution]
t_end = 30.0
dt = 0.5
micro_dt = 0.05
method = "InteractionMidpoint"
unitarity_tol = 1e-8
boundary_tol = 1e-6

[mourre]
dim = 96
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_reports_field_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.toml", SMALL);
    let out = cascade(&["validate", &good]);
    assert!(out.status.success());
    assert_eq!(json(&out), serde_json::json!([]));

    let bad = write(dir.path(), "bad.toml", &SMALL.replace("dim = 96\nr_values", "dim = 1\nr_values"));
    let out = cascade(&["validate", &bad]);
    assert_eq!(out.status.code(), Some(2));
    let errs = json(&out);
    assert!(errs.as_array().unwrap().iter().any(|e| e["field"] == "dim"), "{errs}");

    let out = cascade(&["validate", &dir.path().join("missing.toml").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let runs = dir.path().join("out");
    let out = cascade(&["run", &cfg, "--output-dir", runs.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("r=1 exponent"), "{stdout}");
    for f in ["trace.csv", "fits.json", "mourre.json", "manifest.json"] {
        assert!(runs.join("small").join(f).exists(), "{f}");
    }
}

#[test]
fn failed_check_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[[checks]]\nr = 1.0\nmin = 5.0\n");
    let cfg = write(dir.path(), "strict.toml", &text);
    let out = cascade(&["run", &cfg, "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn operator_commands() {
    let dir = tempfile::tempdir().unwrap();
    let b = BasisModel::shared(BasisKind::Harmonic, 64).unwrap();
    let vk = C64::new(2.0, 0.0);
    let h = dir.path().join("h.mat");
    let a = dir.path().join("a.txt");
    save_operator(&transporter_h0(&b, 1, vk).unwrap(), &h).unwrap();
    save_operator(&conjugate_operator_harmonic(&b, 1, vk).unwrap(), &a).unwrap();
    let (h, a) = (h.to_str().unwrap(), a.to_str().unwrap());

    let avg = dir.path().join("avg.mat");
    let out = cascade(&["average", h, "transport", "--quadrature", "16", "--out", avg.to_str().unwrap()]);
    assert!(out.status.success());
    let rep = json(&out);
    assert!(rep["quadrature"]["difference"].as_f64().unwrap() < 1e-12, "{rep}");
    assert!(avg.exists());

    let out = cascade(&["mourre", h, a, "-0.5,0.5"]);
    assert!(out.status.success(), "{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    assert!(json(&out)["theta_strict"].as_f64().unwrap() > 0.0);

    let out = cascade(&["mourre", h, a, "0.5,-0.5"]);
    assert_eq!(out.status.code(), Some(2));

    let out = cascade(&["average", h, "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn weyl_slope() {
    let out = cascade(&["weyl", "--dim", "1024", "--ns", "32,64,128,256"]);
    assert!(out.status.success());
    let slope = json(&out)["slope"].as_f64().unwrap();
    assert!((slope + 0.5).abs() < 0.05, "{slope}");
}
