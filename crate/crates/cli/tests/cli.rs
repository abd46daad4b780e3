#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use relpose::config::Config;
use relpose::pipeline::run_scene;
use relpose::synth::{generate_scene, sample_poses, PoseRecord};
use relpose::{Mask, SyntheticSceneSpec};
use serde_json::Value;

fn relpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relpose")).args(args).output().unwrap()
}

fn write_spec(dir: &Path, spec: &SyntheticSceneSpec) -> String {
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_vec_pretty(spec).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn noiseless_e2e_with_static_object_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = noiseless_spec(2);
    let (pose, _) = sample_poses(&spec);
    spec.pose_a = Some(PoseRecord::from(&pose));
    spec.pose_q = spec.pose_a;
    let r = report(&relpose(&["e2e", "--spec", &write_spec(dir.path(), &spec)]));
    assert_eq!(r["metrics"]["ar"], 1.0);
    assert!(r["metrics"]["add_err"].as_f64().unwrap() < 1e-6);
}

#[test]
fn e2e_matches_library_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = benchmark_spec(6);
    let r = report(&relpose(&["e2e", "--spec", &write_spec(dir.path(), &spec)]));
    let lib = run_scene(&generate_scene(&spec).unwrap(), &Config::default(), spec.seed).unwrap();
    assert_eq!(r["rotation_error_deg"].as_f64().unwrap(), lib.rotation_error_deg);
    assert_eq!(r["translation_error_m"].as_f64().unwrap(), lib.translation_error_m);
    assert_eq!(r["inliers"].as_u64().unwrap() as usize, lib.inliers);
    assert_eq!(r["seed"], 6);
}

#[test]
fn staged_commands_reproduce_e2e() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &benchmark_spec(8));
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let e2e = report(&relpose(&["e2e", "--spec", &spec]));
    report(&relpose(&["synth", "--spec", &spec, "--out", &d("scene")]));
    let manifest = d("scene/manifest.json");
    report(&relpose(&["match", "--manifest", &manifest, "--out", &d("m")]));
    let reg = report(&relpose(&[
        "register", "--manifest", &manifest, "--matches", &d("m/matches.csv"), "--seed", "8", "--out", &d("r"),
    ]));
    assert_eq!(reg["inliers"], e2e["inliers"]);
    let eval = report(&relpose(&["evaluate", "--manifest", &manifest, "--pose", &d("r/pose.json")]));
    assert_eq!(eval["ar"], e2e["metrics"]["ar"]);
}

#[test]
fn csv_report_has_header_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &benchmark_spec(1));
    let out = relpose(&["e2e", "--spec", &spec, "--format", "csv", "--out", &dir.path().join("o").to_string_lossy()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].split(',').any(|k| k == "metrics.ar"));
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    assert_eq!(std::fs::read_to_string(dir.path().join("o/report.csv")).unwrap(), text);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &benchmark_spec(3));
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();

    std::fs::write(d("bad.json"), r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(relpose(&["e2e", "--spec", &spec, "--config", &d("bad.json")]).status.code(), Some(2));
    assert_eq!(relpose(&["match", "--manifest", &d("missing.json")]).status.code(), Some(2));

    report(&relpose(&["synth", "--spec", &spec, "--out", &d("scene")]));
    let scene = relpose::io::load_scene(Path::new(&d("scene/manifest.json"))).unwrap();
    relpose::io::save_mask(Path::new(&d("scene/mask_a.png")), &Mask::empty(scene.mask_a.height, scene.mask_a.width))
        .unwrap();
    assert_eq!(relpose(&["match", "--manifest", &d("scene/manifest.json")]).status.code(), Some(3));
}

#[test]
fn outlier_descriptors_fail_registration_or_score_low() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = benchmark_spec(4);
    spec.outlier_fraction = 0.99;
    let out = relpose(&["e2e", "--spec", &write_spec(dir.path(), &spec)]);
    match out.status.code() {
        Some(4) => {}
        Some(0) => assert!(report(&out)["inlier_ratio"].as_f64().unwrap() < 0.1),
        c => panic!("unexpected exit {c:?}"),
    }
}
