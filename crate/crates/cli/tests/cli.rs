use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_corrlab"));
    c.env_remove("CORRLAB_SEED");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"))
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(cfg).arg("--out").arg(out).args(extra).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_vec(value).unwrap()).unwrap();
    p
}

#[test]
fn list_has_one_row_per_scenario() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().any(|r| r.starts_with("white_noise_green") && r.contains("derivative identity")));
    assert!(rows.iter().any(|r| r.starts_with("waveguide_dispersion") && r.contains("trapped spectrum")));
}

#[test]
fn white_noise_green_report_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("wng");
    let o = run(&config("white_noise_green"), &out, &["--strict"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("report.json"));
    assert_eq!(report["pass"], true);
    let checks = report["checks"].as_array().unwrap();
    let exact = checks.iter().find(|c| c["test"] == "derivative_green_exact").unwrap();
    assert!(exact["residual"].as_f64().unwrap() < exact["tolerance"].as_f64().unwrap());
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["files"]["correlation.csv"].is_string());
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_seed_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = json(&config("white_noise_green"));
    v.as_object_mut().unwrap().remove("seed");
    let p = write_config(tmp.path(), &v);
    for cmd in ["validate", "run"] {
        let o = bin().arg(cmd).arg(&p).output().unwrap();
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains("`seed`"));
    }
}

#[test]
fn incomplete_scenario_block_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = json(&config("exact_scalar"));
    v.as_object_mut().unwrap().remove("noise");
    let o = bin().arg("validate").arg(write_config(tmp.path(), &v)).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`noise`"));
}

#[test]
fn reruns_are_bit_identical_and_seed_override_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("banded_noise_semiclassical");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &[]).status.success());
    let files = |d: &Path| json(&d.join("manifest.json"))["files"].clone();
    assert_eq!(files(&a), files(&b));
    assert!(files(&a).as_object().unwrap().len() >= 2);
    let o = bin().env("CORRLAB_SEED", "99").arg("run").arg(&cfg).arg("--out").arg(&c).output().unwrap();
    assert!(o.status.success());
    assert_eq!(json(&c.join("manifest.json"))["seed"], 99);
    assert_ne!(files(&a)["empirical.csv"], files(&c)["empirical.csv"]);
}

#[test]
fn manifest_revalidates_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&config("exact_scalar"), &a, &[]).status.success());
    let manifest = a.join("manifest.json");
    assert!(bin().arg("validate").arg(&manifest).output().unwrap().status.success());
    assert!(run(&manifest, &b, &[]).status.success());
    let m = |d: &Path| json(&d.join("manifest.json"));
    assert_eq!(m(&a)["files"], m(&b)["files"]);
    assert_eq!(m(&a)["config_hash"], m(&b)["config_hash"]);
}

#[test]
fn strict_mode_turns_failed_checks_into_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = json(&config("ray_traveltime"));
    v["rays"]["expected_travel_time"] = Value::from(2.0);
    let p = write_config(tmp.path(), &v);
    let lax = run(&p, &tmp.path().join("lax"), &[]);
    assert_eq!(lax.status.code(), Some(0));
    assert_eq!(json(&tmp.path().join("lax/report.json"))["pass"], false);
    let strict = run(&p, &tmp.path().join("strict"), &["--strict"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn artifacts_stay_inside_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    std::fs::create_dir(&work).unwrap();
    let cfg = std::fs::read(config("waveguide_dispersion")).unwrap();
    std::fs::write(work.join("cfg.json"), cfg).unwrap();
    let o = bin().current_dir(&work).arg("run").arg("cfg.json").arg("--out").arg("res").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut top: Vec<String> =
        std::fs::read_dir(&work).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    top.sort();
    assert_eq!(top, ["cfg.json", "res"]);
    let mut inside: Vec<String> =
        std::fs::read_dir(work.join("res")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    inside.sort();
    assert_eq!(inside, ["checks.json", "dispersion.csv", "manifest.json", "report.json"]);
}

#[test]
fn every_shipped_config_validates() {
    for entry in std::fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")).unwrap() {
        let p = entry.unwrap().path();
        let o = bin().arg("validate").arg(&p).output().unwrap();
        assert!(o.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&o.stderr));
    }
}
