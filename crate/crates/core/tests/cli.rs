use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avatarfit::body::BodyParams;
use avatarfit::io::{read_model, read_obj, write_json, ParamsFile};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avatarfit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn scenario(dir: &Path) -> PathBuf {
    let s = dir.join("s");
    ok(&["synth", "--preset", "capsule_biped", "--out-dir", p(&s), "--seed", "3"]);
    s
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).map(|path| (path.clone(), fs::read(path).unwrap())).collect()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["pose", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2_with_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["eval-cd", "--a", "/nonexistent/a.obj", "--b", "/nonexistent/b.obj"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");

    let bad = dir.path().join("bad.obj");
    fs::write(&bad, "v 0 0 0\nv 1 0 0\nf 1 2 3\n").unwrap();
    let out = run(&["eval-cd", "--a", p(&bad), "--b", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("line 3"), "{err}");
}

#[test]
fn pose_with_zero_params_reproduces_the_template() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path());
    let (model, _) = read_model(&s.join("model.avm")).unwrap();
    let zeros = dir.path().join("zeros.json");
    write_json(&zeros, &ParamsFile { frames: vec![BodyParams::zeros(&model)] }).unwrap();
    let posed = dir.path().join("posed.obj");
    let report = ok(&["pose", "--model", p(&s.join("model.avm")), "--params", p(&zeros), "--out", p(&posed)]);
    assert_eq!(report["joints"].as_array().unwrap().len(), model.num_joints());
    let (mesh, _) = read_obj(&posed).unwrap();
    assert_eq!(mesh.faces, model.faces);
    assert_eq!(mesh.vertices, model.template);
}

#[test]
fn synth_fit_eval_recovers_the_scan_without_touching_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path());
    let before = snapshot(&s);
    let fitted = dir.path().join("fitted.obj");
    let report = dir.path().join("report.json");
    ok(&[
        "fit", "--model", p(&s.join("model.avm")), "--params", p(&s.join("params.json")), "--scan", p(&s.join("scan.obj")),
        "--config", p(&s.join("fit.json")), "--out", p(&fitted), "--report", p(&report),
    ]);
    let rep: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["stage"], "both");

    let metrics = ok(&["eval-cd", "--a", p(&fitted), "--b", p(&s.join("scan.obj")), "--samples", "50000"]);
    let cd = metrics["cd_scaled"].as_f64().unwrap();
    assert!(cd < 1.0, "cd_scaled {cd}");
    let initial = ok(&["eval-cd", "--a", p(&s.join("posed.obj")), "--b", p(&s.join("scan.obj")), "--samples", "50000"]);
    assert!(cd < initial["cd_scaled"].as_f64().unwrap());

    let k3d = dir.path().join("k3d.json");
    ok(&["triangulate", "--keypoints", p(&s.join("keypoints2d.json")), "--cameras", p(&s.join("cameras.json")), "--out", p(&k3d)]);
    let img = dir.path().join("r.png");
    let mask = dir.path().join("m.png");
    let rendered = ok(&[
        "render", "--mesh", p(&s.join("posed.obj")), "--texture", p(&s.join("texture.png")), "--cameras",
        p(&s.join("cameras.json")), "--camera-id", "cam00", "--out", p(&img), "--mask", p(&mask),
    ]);
    assert!(rendered["mask_pixels"].as_u64().unwrap() > 0);
    let same = ok(&["eval-img", "--a", p(&img), "--b", p(&img), "--mask", p(&mask)]);
    assert_eq!(same["psnr_infinite"], true);
    assert_eq!(same["ssim"], 1.0);

    assert_eq!(snapshot(&s), before);
}

#[test]
fn transfer_and_graph_run_on_a_synth_model() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path());
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"rounds": [{"delete_ids": [0, 1, 2]}]}"#).unwrap();
    let lite = dir.path().join("lite.avm");
    let report = ok(&["transfer", "--model", p(&s.join("model.avm")), "--spec", p(&spec), "--out", p(&lite)]);
    assert!(report.is_object());
    let (source, _) = read_model(&s.join("model.avm")).unwrap();
    let (out, _) = read_model(&lite).unwrap();
    assert_eq!(out.num_joints(), source.num_joints());
    assert!(out.num_vertices() >= source.num_vertices() - 3);

    let graph = dir.path().join("graph.json");
    ok(&["graph", "--model", p(&lite), "--k", "2", "--out", p(&graph)]);
    let g: Value = serde_json::from_slice(&fs::read(&graph).unwrap()).unwrap();
    assert!(g.is_object());
}

#[test]
fn thread_env_must_be_an_integer() {
    let out = Command::new(env!("CARGO_BIN_EXE_avatarfit")).env("AVATARFIT_THREADS", "many").args(["eval-cd", "--a", "x", "--b", "y"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
