//! Counterfactual generation over an evaluation set, the on-disk run
//! layout, and run evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vidcf_core::data::Task;
use vidcf_core::guidance::{
    generate_counterfactual, select_target, CounterfactualResult, GuidanceConfig, TargetSelect,
    Variant,
};
use vidcf_core::metrics::{evaluate_run_set, MetricsReport};
use vidcf_core::refine::{refine, RefineConfig};
use vidcf_core::target::TargetModel;
use vidcf_core::tensor::VideoTensor;

use crate::config::{read_json, write_json, ExperimentConfig};
use crate::error::UserError;
use crate::pipeline::{eval_set, load_fixtures, load_target_for, FixtureHashes, Fixtures};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const VIDEOS_DIR: &str = "videos";

/// Per-video wall-clock time around generation and refinement only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub per_video_seconds: Vec<f64>,
    pub median_seconds: f64,
    pub total_seconds: f64,
}

impl Timing {
    pub fn from_seconds(per_video_seconds: Vec<f64>) -> Self {
        Self {
            median_seconds: median(&per_video_seconds),
            total_seconds: per_video_seconds.iter().sum(),
            per_video_seconds,
        }
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub task: Task,
    pub variant: Variant,
    pub split: String,
    /// Dataset indices of the explained videos, in result order.
    pub indices: Vec<usize>,
    pub fixtures: FixtureHashes,
    pub timing: Timing,
}

/// Seeds of video `pos` of an evaluation set. Target selection does not
/// depend on the variant, so RG, SG and SGA explain the same targets from
/// the same `z_T`.
pub fn video_guidance(g: &GuidanceConfig, pos: usize) -> GuidanceConfig {
    GuidanceConfig {
        seed: g.seed.derive(format!("video/{pos}")),
        ..g.clone()
    }
}

/// Picks the target of video `pos` from its factual prediction.
pub fn video_target(
    fx: &Fixtures,
    g: &GuidanceConfig,
    select: &TargetSelect,
    x_f: &VideoTensor,
    pos: usize,
) -> Result<vidcf_core::data::Label> {
    let pred = fx.target.predict(&x_f.to_tensor())?;
    Ok(select_target(
        &pred,
        g.task,
        select,
        &g.seed.derive(format!("select/{pos}")),
    )?)
}

/// Explains one video; refinement runs when `refine_cfg` is given.
/// Returns the result and the seconds spent generating and refining.
pub fn explain_video(
    fx: &Fixtures,
    g: &GuidanceConfig,
    select: &TargetSelect,
    refine_cfg: Option<&RefineConfig>,
    x_f: &VideoTensor,
    pos: usize,
) -> Result<(CounterfactualResult, f64)> {
    let y = video_target(fx, g, select, x_f, pos)?;
    let gv = video_guidance(g, pos);
    let start = Instant::now();
    let mut r = generate_counterfactual(
        x_f,
        &y,
        &gv,
        &fx.codec,
        &fx.schedule,
        &fx.denoiser,
        &fx.target,
    )?;
    if let Some(rc) = refine_cfg {
        r = refine(r, rc, &fx.codec, &fx.schedule, &fx.denoiser, &fx.target)?;
    }
    Ok((r, start.elapsed().as_secs_f64()))
}

pub fn video_dir(run_dir: &Path, pos: usize) -> PathBuf {
    run_dir.join(VIDEOS_DIR).join(format!("{pos:04}"))
}

pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building the worker pool")
}

/// Generates (and for SGA refines) every video of the evaluation set and
/// writes the run directory `out`.
pub fn generate_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let fx = load_fixtures(cfg)?;
    let ds = eval_set(cfg)?;
    let refine_cfg = (cfg.guidance.variant == Variant::SGA).then(|| cfg.refine());
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let n = ds.len();
    let seconds = pool(cfg.workers)?.install(|| {
        ds.videos
            .par_iter()
            .enumerate()
            .map(|(pos, x_f)| {
                let (r, secs) = explain_video(
                    &fx,
                    &cfg.guidance,
                    &cfg.target_select,
                    refine_cfg.as_ref(),
                    x_f,
                    pos,
                )
                .with_context(|| format!("video {pos} (dataset index {})", ds.indices[pos]))?;
                r.save(video_dir(out, pos))?;
                tracing::info!(video = pos + 1, of = n, seconds = secs, "generated");
                Ok(secs)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let manifest = RunManifest {
        config_hash: cfg.content_hash(),
        task: cfg.task,
        variant: cfg.guidance.variant,
        split: cfg.eval.split.clone(),
        indices: ds.indices.clone(),
        fixtures: fx.hashes(),
        timing: Timing::from_seconds(seconds),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_run_config(dir: &Path) -> Result<ExperimentConfig> {
    let v = read_json(&dir.join(CONFIG_FILE))?;
    serde_json::from_value(v)
        .map_err(|e| UserError(format!("{}: {e}", dir.join(CONFIG_FILE).display())).into())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let v = read_json(&dir.join(MANIFEST_FILE))?;
    serde_json::from_value(v)
        .map_err(|e| UserError(format!("{}: {e}", dir.join(MANIFEST_FILE).display())).into())
}

/// Loads every result of a run; unreadable ones come back as errors in
/// their slot.
pub fn load_results(dir: &Path, manifest: &RunManifest) -> Vec<(usize, Result<CounterfactualResult>)> {
    (0..manifest.indices.len())
        .map(|pos| {
            let d = video_dir(dir, pos);
            let r = CounterfactualResult::load(&d)
                .with_context(|| format!("reading {}", d.display()));
            (pos, r)
        })
        .collect()
}

/// Evaluates a run directory with the target model it was generated with,
/// writing `metrics.json` and `metrics.csv`.
pub fn evaluate_run(dir: &Path) -> Result<MetricsReport> {
    let mut cfg = read_run_config(dir)?;
    let manifest = read_manifest(dir)?;
    cfg.checkpoints.target_hash = Some(manifest.fixtures.target.clone());
    let target = load_target_for(&cfg)?;
    let mut results = Vec::with_capacity(manifest.indices.len());
    for (_, r) in load_results(dir, &manifest) {
        results.push(r?);
    }
    let report = evaluate_results(&results, &target, &cfg.eval.layers)?;
    write_json(&dir.join(METRICS_FILE), &report)?;
    write_metrics_csv(&dir.join(METRICS_CSV), &report)?;
    Ok(report)
}

pub fn evaluate_results(
    results: &[CounterfactualResult],
    target: &dyn TargetModel,
    layers: &[String],
) -> Result<MetricsReport> {
    Ok(evaluate_run_set(results, target, layers)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per video.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "index",
        "y_target",
        "pred_f",
        "pred_cf",
        "pred_mask_cf",
        "ssim_cf",
        "perceptual_cf",
        "l1_cf",
        "ssim_mask_cf",
        "perceptual_mask_cf",
        "l1_mask_cf",
        "mask_density",
    ])?;
    for r in &report.runs {
        w.write_record([
            r.index.to_string(),
            r.y_target.to_string(),
            r.pred_f.to_string(),
            r.pred_cf.to_string(),
            r.pred_mask_cf.map(|l| l.to_string()).unwrap_or_default(),
            r.ssim_cf.to_string(),
            r.perceptual_cf.to_string(),
            r.l1_cf.to_string(),
            opt(r.ssim_mask_cf),
            opt(r.perceptual_mask_cf),
            opt(r.l1_mask_cf),
            opt(r.mask_density),
        ])?;
    }
    w.flush()?;
    Ok(())
}
