use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn crownfuse(out: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crownfuse"));
    cmd.arg("--out-dir").arg(out).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str], env: &[(&str, &str)]) {
    let o = crownfuse(out, args, env);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn error_record(o: &Output) -> Value {
    assert!(!o.status.success());
    let text = String::from_utf8_lossy(&o.stderr);
    let v: Value = serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"));
    v["error"].clone()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

const FIVE_CROWNS: [(&str, &str); 2] = [("CROWNFUSE_SYNTH_COUNT", "5"), ("CROWNFUSE_SYNTH_DROP_RATE", "0")];

#[test]
fn empty_detection_file_fuses_to_no_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("det.json");
    fs::write(&det, r#"{"image_id":"a","width":300,"height":200,"boxes":[]}"#).unwrap();
    ok(dir.path(), &["fuse", "--detections", det.to_str().unwrap()], &[]);
    let fused = json(&dir.path().join("fused.json"));
    assert_eq!(fused["boxes"], Value::Array(vec![]));
    assert_eq!(fused["width"], 300);
}

#[test]
fn synthetic_scene_is_fully_recovered_and_env_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "7", "synth"], &FIVE_CROWNS);
    assert_eq!(json(&d.join("gt.json"))["boxes"].as_array().unwrap().len(), 5);
    let (img, det, gt) = (d.join("scene.png"), d.join("detections.json"), d.join("gt.json"));
    ok(
        d,
        &[
            "all",
            "--image",
            img.to_str().unwrap(),
            "--detections",
            det.to_str().unwrap(),
            "--gt",
            gt.to_str().unwrap(),
        ],
        &[],
    );
    let report = json(&d.join("report.json"));
    assert_eq!(report["total_gt"], 5);
    assert_eq!(report["rate"], 1.0);
}

#[test]
fn all_matches_the_stage_sequence() {
    let base = tempfile::tempdir().unwrap();
    let (src, staged, chained) = (
        base.path().join("src"),
        base.path().join("staged"),
        base.path().join("chained"),
    );
    ok(&src, &["--seed", "3", "synth"], &[]);
    let img = src.join("scene.png");
    let det = src.join("detections.json");
    let gt = src.join("gt.json");
    let (img, det, gt) = (img.to_str().unwrap(), det.to_str().unwrap(), gt.to_str().unwrap());

    ok(&staged, &["detect-traditional", "--image", img], &[]);
    ok(&staged, &["fuse", "--detections", det], &[]);
    ok(&staged, &["integrate", "--image", img], &[]);
    ok(&staged, &["evaluate", "--gt", gt], &[]);
    ok(&chained, &["all", "--image", img, "--detections", det, "--gt", gt], &[]);

    let (a, b) = (files(&staged), files(&chained));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs");
    }
}

#[test]
fn tiling_and_workers_do_not_change_outputs() {
    let base = tempfile::tempdir().unwrap();
    let src = base.path().join("src");
    ok(&src, &["--seed", "11", "synth"], &[]);
    let img = src.join("scene.png");
    let det = src.join("detections.json");
    let args = [
        "all",
        "--image",
        img.to_str().unwrap(),
        "--detections",
        det.to_str().unwrap(),
    ];

    let plain = base.path().join("plain");
    ok(&plain, &args, &[("CROWNFUSE_RUN_WORKERS", "1")]);
    let tiled = base.path().join("tiled");
    let mut tiled_args = vec!["--tiling", "--workers", "3"];
    tiled_args.extend(args);
    ok(&tiled, &tiled_args, &[("CROWNFUSE_RUN_TILE_SIZE", "200")]);
    assert_eq!(files(&plain), files(&tiled));
}

#[test]
fn dimension_mismatch_is_reported() {
    let base = tempfile::tempdir().unwrap();
    let d = base.path();
    ok(d, &["synth"], &FIVE_CROWNS);
    let img = d.join("scene.png");
    ok(d, &["detect-traditional", "--image", img.to_str().unwrap()], &[]);
    let det = d.join("small.json");
    fs::write(
        &det,
        r#"{"image_id":"scene","width":64,"height":64,"boxes":[{"model_id":0,"x1":0.1,"y1":0.1,"x2":0.3,"y2":0.3,"score":0.9}]}"#,
    )
    .unwrap();
    ok(d, &["fuse", "--detections", det.to_str().unwrap()], &[]);
    let o = crownfuse(d, &["integrate", "--image", img.to_str().unwrap()], &[]);
    assert_eq!(error_record(&o)["kind"], "dimension-mismatch");
}

#[test]
fn malformed_json_gives_parse_record() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"image_id\": ").unwrap();
    let o = crownfuse(dir.path(), &["fuse", "--detections", bad.to_str().unwrap()], &[]);
    let err = error_record(&o);
    assert_eq!(err["kind"], "parse");
    assert_eq!(err["file"], bad.to_str().unwrap());
}

#[test]
fn bad_configuration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = crownfuse(dir.path(), &["synth"], &[("CROWNFUSE_NOPE_X", "1")]);
    assert_eq!(error_record(&o)["kind"], "config");

    let o = crownfuse(dir.path(), &["--tau-a", "1.5", "synth"], &[]);
    let err = error_record(&o);
    assert_eq!(err["kind"], "config");

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[integrate]\nunknown_key = 1\n").unwrap();
    let o = crownfuse(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"], &[]);
    assert_eq!(error_record(&o)["kind"], "config");
}

#[test]
fn missing_image_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = crownfuse(dir.path(), &["detect-traditional"], &[]);
    assert_eq!(error_record(&o)["kind"], "usage");
}
