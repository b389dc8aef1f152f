use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};
use vidcf_core::guidance::{CounterfactualResult, RESULT_META, RESULT_TENSORS};

fn vidcf(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vidcf"));
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok_json(out: Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON summary")
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// A tiny classification setup with briefly trained checkpoints, shared by
/// all tests.
fn fixture() -> &'static (tempfile::TempDir, Value) {
    static FIX: OnceLock<(tempfile::TempDir, Value)> = OnceLock::new();
    FIX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = json!({
            "task": "classification",
            "dataset": {
                "frames": 4, "height": 16, "width": 16,
                "splits": [
                    {"name": "train", "start": 0, "len": 8},
                    {"name": "val", "start": 8, "len": 4},
                    {"name": "test", "start": 12, "len": 8}
                ]
            },
            "codec": {"train": {"steps": 10}},
            "denoiser": {"train": {"steps": 10}},
            "target": {"train": {"steps": 10}, "init_videos": 8},
            "checkpoints": {"dir": dir.path().join("ckpt")},
            "eval": {"count": 2},
            "guidance": {"steps": 2, "n": 2, "lambda_c": 5.0},
            "out": dir.path().join("run")
        });
        let path = write_config(dir.path(), "base.json", &cfg);
        for c in ["codec", "denoiser", "target"] {
            ok_json(vidcf(&["--config", path.to_str().unwrap(), "train", c], &[]));
        }
        (dir, cfg)
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn variant_config(dir: &Path, name: &str, patch: Value) -> PathBuf {
    let mut cfg = fixture().1.clone();
    merge(&mut cfg, patch);
    write_config(dir, name, &cfg)
}

#[test]
fn missing_dataset_path_is_a_user_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-dataset");
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"task": "classification", "data_dir": missing, "checkpoints": {"dir": dir.path()}}),
    );
    let out = vidcf(&["--config", cfg.to_str().unwrap(), "train", "target"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn bad_invocations_exit_with_the_user_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(vidcf(&["frobnicate"], &[]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "c.json", &json!({"task": "classification", "colour": 1}));
    let out = vidcf(&["--config", cfg.to_str().unwrap(), "generate"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = vidcf(&["generate"], &[("VIDCF__GUIDANCE__N", "0")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn retraining_with_the_same_seed_reproduces_the_checkpoint_hash() {
    let (_, base) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant_config(dir.path(), "c.json", json!({}));
    let hash = |out: &Path| {
        let v = ok_json(vidcf(
            &["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "train", "target"],
            &[],
        ));
        v["content_hash"].as_str().unwrap().to_string()
    };
    let a = hash(&dir.path().join("a"));
    assert_eq!(a, hash(&dir.path().join("b")));
    let fixture_meta: Value = serde_json::from_slice(
        &std::fs::read(Path::new(base["checkpoints"]["dir"].as_str().unwrap()).join("target.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(fixture_meta["content_hash"].as_str().unwrap(), a);
}

#[test]
fn empty_evaluation_set_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant_config(dir.path(), "c.json", json!({"eval": {"count": 0}}));
    let out = vidcf(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap(), "generate"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hash_mismatch_stops_before_any_generation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant_config(dir.path(), "c.json", json!({"checkpoints": {"codec_hash": "beef"}}));
    let run = dir.path().join("r");
    let out = vidcf(&["--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap(), "generate"], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!run.join("videos").exists());
}

fn generate(dir: &Path, name: &str, patch: Value) -> PathBuf {
    let cfg = variant_config(dir, &format!("{name}.json"), patch);
    let run = dir.join(name);
    ok_json(vidcf(&["--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap(), "generate"], &[]));
    run
}

#[test]
fn raw_gradient_run_equals_degenerate_smoothgrad_run() {
    let dir = tempfile::tempdir().unwrap();
    let rg = generate(dir.path(), "rg", json!({"guidance": {"variant": "RG"}}));
    let sg = generate(dir.path(), "sg", json!({"guidance": {"variant": "SG", "n": 1, "sigma": 0.0}}));
    for pos in ["0000", "0001"] {
        let (a, b) = (rg.join("videos").join(pos), sg.join("videos").join(pos));
        assert_eq!(std::fs::read(a.join(RESULT_TENSORS)).unwrap(), std::fs::read(b.join(RESULT_TENSORS)).unwrap());
        let meta = |p: &Path| {
            let mut v: Value = serde_json::from_slice(&std::fs::read(p.join(RESULT_META)).unwrap()).unwrap();
            v.as_object_mut().unwrap().remove("config");
            v
        };
        assert_eq!(meta(&a), meta(&b));
    }
}

#[test]
fn eight_video_run_persists_loadable_results_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run = generate(dir.path(), "r", json!({"eval": {"count": 8}, "guidance": {"variant": "SGA"}}));
    for pos in 0..8 {
        let r = CounterfactualResult::load(run.join("videos").join(format!("{pos:04}"))).unwrap();
        assert!(r.x_mask_cf.is_some() && r.mask_density.is_some());
        assert_eq!(r.trace.len(), 2);
    }
    let v = ok_json(vidcf(&["evaluate", run.to_str().unwrap()], &[]));
    assert!(v["cf"]["flip_ratio"].as_f64().is_some() && v["mask_cf"]["flip_ratio"].as_f64().is_some());
    assert!(run.join("metrics.json").is_file() && run.join("metrics.csv").is_file());
}

#[test]
fn report_has_a_row_and_grid_per_video_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let run = generate(dir.path(), "r", json!({"guidance": {"variant": "SGA"}}));
    ok_json(vidcf(&["report", run.to_str().unwrap()], &[]));
    let csv1 = std::fs::read_to_string(run.join("report.csv")).unwrap();
    let md1 = std::fs::read(run.join("report.md")).unwrap();
    assert_eq!(csv1.lines().count(), 3, "{csv1}");
    let grids = std::fs::read_dir(run.join("grids")).unwrap().count();
    assert_eq!(grids, 2);
    ok_json(vidcf(&["report", run.to_str().unwrap()], &[]));
    assert_eq!(std::fs::read_to_string(run.join("report.csv")).unwrap(), csv1);
    assert_eq!(std::fs::read(run.join("report.md")).unwrap(), md1);
}

fn sweep(dir: &Path, spec: Value) -> Vec<csv::StringRecord> {
    let p = write_config(dir, "sweep.json", &spec);
    let out = dir.join("out");
    ok_json(vidcf(&["--config", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "sweep"], &[]));
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    let mut rows = vec![header];
    rows.extend(r.records().map(|x| x.unwrap()));
    rows
}

#[test]
fn single_point_sweep_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep(
        dir.path(),
        json!({"base": fixture().1, "lambda_c": [5.0], "steps": [2], "t_sup": [0.1], "variants": ["SG"]}),
    );
    assert_eq!(rows.len(), 2);
    let status = rows[0].iter().position(|h| h == "status").unwrap();
    assert_eq!(&rows[1][status], "ok");
}

#[test]
fn mask_density_does_not_grow_along_the_threshold_grid() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep(
        dir.path(),
        json!({
            "base": fixture().1, "lambda_c": [5.0], "steps": [2],
            "t_sup": [0.0, 0.05, 0.2, 0.8], "variants": ["SGA"], "count": 3
        }),
    );
    let col = |name: &str| rows[0].iter().position(|h| h == name).unwrap();
    let (t, d) = (col("t_sup"), col("mask_density"));
    let pts: Vec<(f64, f64)> = rows[1..].iter().map(|r| (r[t].parse().unwrap(), r[d].parse().unwrap())).collect();
    assert_eq!(pts.len(), 4);
    let mut sorted = pts.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(sorted.windows(2).all(|w| w[1].1 <= w[0].1), "{sorted:?}");
}
