//! Grid sweeps over `(variant, T, lambda_c, t_sup)` with per-point
//! persistence, so an interrupted sweep resumes where it stopped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vidcf_core::data::Task;
use vidcf_core::guidance::{GuidanceConfig, Variant};
use vidcf_core::metrics::{AggregateMetrics, MetricsReport};
use vidcf_core::refine::{refine_with_reference, unguided_reference, RefineConfig};

use crate::config::{
    apply_env_overrides, canonical_hash, merge, read_json, write_json, ExperimentConfig,
};
use crate::error::UserError;
use crate::pipeline::{eval_set, load_fixtures, Fixtures};
use crate::report::{markdown_table, Better};
use crate::run::{explain_video, median, pool};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_MD: &str = "sweep.md";
pub const SWEEP_SPEC: &str = "sweep.json";
pub const POINTS_DIR: &str = "points";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base config: an inline document or the path of a config file,
    /// relative to the sweep file.
    pub base: Value,
    pub lambda_c: Vec<f32>,
    pub steps: Vec<usize>,
    pub t_sup: Vec<f32>,
    pub variants: Vec<Variant>,
    /// Evaluation-set size; defaults to the base config's `eval.count`.
    #[serde(default)]
    pub count: Option<usize>,
}

/// A sweep spec with its base config resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSweep {
    pub base: ExperimentConfig,
    pub lambda_c: Vec<f32>,
    pub steps: Vec<usize>,
    pub t_sup: Vec<f32>,
    pub variants: Vec<Variant>,
}

impl SweepSpec {
    pub fn resolve(
        self,
        spec_dir: &Path,
        env: impl IntoIterator<Item = (String, String)>,
        seed: Option<u64>,
    ) -> Result<ResolvedSweep> {
        let mut doc = match self.base {
            Value::String(p) => read_json(&spec_dir.join(p))?,
            v @ Value::Object(_) => v,
            _ => return Err(UserError("sweep `base` must be an object or a path".into()).into()),
        };
        apply_env_overrides(&mut doc, env)?;
        if let Some(s) = seed {
            merge(&mut doc, json!({ "seed": s }));
        }
        if let Some(c) = self.count {
            merge(&mut doc, json!({ "eval": { "count": c } }));
        }
        let base = ExperimentConfig::from_value(doc).context("in the sweep base config")?;
        let sweep = ResolvedSweep {
            base,
            lambda_c: self.lambda_c,
            steps: self.steps,
            t_sup: self.t_sup,
            variants: self.variants,
        };
        sweep.validate()?;
        Ok(sweep)
    }
}

pub fn load_sweep(
    path: &Path,
    env: impl IntoIterator<Item = (String, String)>,
    seed: Option<u64>,
) -> Result<ResolvedSweep> {
    let spec: SweepSpec = serde_json::from_value(read_json(path)?)
        .map_err(|e| UserError(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    spec.resolve(dir, env, seed)
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub variant: Variant,
    pub steps: usize,
    pub lambda_c: f32,
    pub t_sup: f32,
}

impl ResolvedSweep {
    pub fn validate(&self) -> Result<(), UserError> {
        let empty = [
            ("lambda_c", self.lambda_c.is_empty()),
            ("steps", self.steps.is_empty()),
            ("t_sup", self.t_sup.is_empty()),
            ("variants", self.variants.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(UserError(format!("sweep grid `{name}` is empty")));
        }
        for p in self.points() {
            let mut g = self.base.guidance.clone();
            apply_point(&mut g, &p);
            g.validate().map_err(|e| UserError(format!("sweep point {p:?}: {e}")))?;
            RefineConfig {
                t_sup: p.t_sup,
                channels: 1,
            }
            .validate()
            .map_err(|e| UserError(format!("sweep point {p:?}: {e}")))?;
        }
        Ok(())
    }

    /// All points, variant-major then `T`, `lambda_c`, `t_sup`.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut v = Vec::new();
        for &variant in &self.variants {
            for &steps in &self.steps {
                for &lambda_c in &self.lambda_c {
                    for &t_sup in &self.t_sup {
                        v.push(SweepPoint {
                            variant,
                            steps,
                            lambda_c,
                            t_sup,
                        });
                    }
                }
            }
        }
        v
    }

    /// Identity of a point: base config hash plus the point's coordinates.
    pub fn point_hash(&self, p: &SweepPoint) -> String {
        canonical_hash(&json!({
            "base": self.base.content_hash(),
            "point": serde_json::to_value(p).expect("point serializes"),
        }))
    }
}

fn apply_point(g: &mut GuidanceConfig, p: &SweepPoint) {
    g.variant = p.variant;
    g.steps = p.steps;
    g.lambda_c = p.lambda_c;
}

/// One CSV row. Metrics describe the variant's output: `x_cf` for RG and
/// SG, `x_mask_cf` for SGA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub steps: usize,
    pub lambda_c: f32,
    pub t_sup: f32,
    pub status: String,
    pub samples: usize,
    pub fr: Option<f64>,
    pub r2: Option<f64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub ssim: Option<f64>,
    pub perceptual: Option<f64>,
    pub l1: Option<f64>,
    pub fid: Option<f64>,
    pub fvd: Option<f64>,
    pub mask_density: Option<f64>,
    /// Median per-video generation (and refinement) time.
    pub seconds_per_video: Option<f64>,
    pub total_seconds: Option<f64>,
    pub point: String,
}

/// Columns that hold wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 2] = ["seconds_per_video", "total_seconds"];

impl ReportRow {
    fn failed(p: &SweepPoint, hash: String, msg: &str) -> Self {
        Self {
            variant: p.variant,
            steps: p.steps,
            lambda_c: p.lambda_c,
            t_sup: p.t_sup,
            status: format!("failed: {msg}"),
            samples: 0,
            fr: None,
            r2: None,
            mae: None,
            rmse: None,
            ssim: None,
            perceptual: None,
            l1: None,
            fid: None,
            fvd: None,
            mask_density: None,
            seconds_per_video: None,
            total_seconds: None,
            point: hash,
        }
    }

    fn from_report(p: &SweepPoint, hash: String, report: &MetricsReport, secs: &[f64]) -> Self {
        let agg: &AggregateMetrics = match (p.variant, &report.mask_cf) {
            (Variant::SGA, Some(m)) => m,
            _ => &report.cf,
        };
        Self {
            status: "ok".into(),
            samples: report.samples,
            fr: agg.flip_ratio,
            r2: agg.r2,
            mae: agg.mae,
            rmse: agg.rmse,
            ssim: Some(agg.ssim),
            perceptual: Some(agg.perceptual),
            l1: Some(agg.l1),
            fid: agg.frechet_frame,
            fvd: agg.frechet_video,
            mask_density: (p.variant == Variant::SGA)
                .then_some(report.mean_mask_density)
                .flatten(),
            seconds_per_video: Some(median(secs)),
            total_seconds: Some(secs.iter().sum()),
            ..Self::failed(p, hash, "")
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Persisted outcome of a completed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub point: SweepPoint,
    pub row: ReportRow,
    pub report: MetricsReport,
}

fn point_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(POINTS_DIR).join(format!("{hash}.json"))
}

fn completed(dir: &Path, hash: &str) -> Option<ReportRow> {
    let text = std::fs::read_to_string(point_path(dir, hash)).ok()?;
    let rec: PointRecord = serde_json::from_str(&text).ok()?;
    (rec.row.is_ok() && rec.row.point == hash).then_some(rec.row)
}

/// Points sharing the noise-free inputs of generation: same smoothing, `T`
/// and `lambda_c`. Their `x_cf` are identical, so they are generated once.
fn generation_key(base: &GuidanceConfig, p: &SweepPoint) -> String {
    let mut g = base.clone();
    apply_point(&mut g, p);
    let (n, sigma) = g.smoothing();
    format!("{n}/{sigma}/{}/{}", p.steps, p.lambda_c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<ReportRow>,
    /// Points computed by this invocation (the rest were resumed).
    pub computed: usize,
}

/// Runs every incomplete point and rewrites the CSV and markdown tables.
pub fn run_sweep(sweep: &ResolvedSweep, dir: &Path) -> Result<SweepOutcome> {
    std::fs::create_dir_all(dir.join(POINTS_DIR))
        .with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join(SWEEP_SPEC), sweep)?;
    let points = sweep.points();
    let hashes: Vec<String> = points.iter().map(|p| sweep.point_hash(p)).collect();
    let mut rows: Vec<Option<ReportRow>> = hashes.iter().map(|h| completed(dir, h)).collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        if rows[i].is_none() {
            groups
                .entry(generation_key(&sweep.base.guidance, p))
                .or_default()
                .push(i);
        }
    }
    let computed = groups.values().map(Vec::len).sum();
    if computed > 0 {
        let fx = load_fixtures(&sweep.base)?;
        let ds = eval_set(&sweep.base)?;
        let groups: Vec<Vec<usize>> = groups.into_values().collect();
        let done: Vec<Vec<(usize, ReportRow)>> = pool(sweep.base.workers)?.install(|| {
            groups
                .par_iter()
                .map(|members| {
                    match run_group(sweep, &fx, &ds.videos, members, &points, &hashes, dir) {
                        Ok(rows) => rows,
                        Err(e) => members
                            .iter()
                            .map(|&i| {
                                let msg = format!("{e:#}");
                                tracing::warn!(point = ?points[i], error = %msg, "sweep point failed");
                                (i, ReportRow::failed(&points[i], hashes[i].clone(), &msg))
                            })
                            .collect(),
                    }
                })
                .collect()
        });
        for (i, row) in done.into_iter().flatten() {
            rows[i] = Some(row);
        }
    }
    let rows: Vec<ReportRow> = rows.into_iter().map(|r| r.expect("every point visited")).collect();
    write_rows_csv(&dir.join(SWEEP_CSV), &rows)?;
    std::fs::write(dir.join(SWEEP_MD), sweep_markdown(sweep.base.task, &rows))
        .with_context(|| format!("writing {}", dir.join(SWEEP_MD).display()))?;
    Ok(SweepOutcome { rows, computed })
}

fn run_group(
    sweep: &ResolvedSweep,
    fx: &Fixtures,
    videos: &[vidcf_core::tensor::VideoTensor],
    members: &[usize],
    points: &[SweepPoint],
    hashes: &[String],
    dir: &Path,
) -> Result<Vec<(usize, ReportRow)>> {
    let head = points[members[0]];
    let mut g = sweep.base.guidance.clone();
    apply_point(&mut g, &head);
    let need_ref = members.iter().any(|&i| points[i].variant == Variant::SGA);
    let mut gen = Vec::with_capacity(videos.len());
    for (pos, x_f) in videos.iter().enumerate() {
        let (r, secs) = explain_video(fx, &g, &sweep.base.target_select, None, x_f, pos)
            .with_context(|| format!("video {pos}"))?;
        let reference = if need_ref {
            let start = Instant::now();
            let x_den = unguided_reference(&r, &fx.codec, &fx.schedule, &fx.denoiser)?;
            Some((x_den, start.elapsed().as_secs_f64()))
        } else {
            None
        };
        gen.push((r, secs, reference));
    }
    let mut out = Vec::with_capacity(members.len());
    for &i in members {
        let p = points[i];
        let mut results = Vec::with_capacity(gen.len());
        let mut secs = Vec::with_capacity(gen.len());
        for (r, s, reference) in &gen {
            let mut r = r.clone();
            r.config.variant = p.variant;
            match (p.variant, reference) {
                (Variant::SGA, Some((x_den, s_ref))) => {
                    let start = Instant::now();
                    let rc = RefineConfig {
                        t_sup: p.t_sup,
                        channels: sweep.base.dataset.channels,
                    };
                    let refined = refine_with_reference(r, x_den.clone(), &rc, &fx.target)?;
                    secs.push(s + s_ref + start.elapsed().as_secs_f64());
                    results.push(refined);
                }
                _ => {
                    secs.push(*s);
                    results.push(r);
                }
            }
        }
        let report = crate::run::evaluate_results(&results, &fx.target, &sweep.base.eval.layers)?;
        let row = ReportRow::from_report(&p, hashes[i].clone(), &report, &secs);
        write_json(
            &point_path(dir, &hashes[i]),
            &PointRecord {
                point: p,
                row: row.clone(),
                report,
            },
        )?;
        tracing::info!(point = ?p, fr = ?row.fr, mae = ?row.mae, "sweep point done");
        out.push((i, row));
    }
    Ok(out)
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| UserError(format!("cannot read {}: {e}", path.display())))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()
        .map_err(|e| UserError(format!("{}: {e}", path.display())))?;
    Ok(rows)
}

/// Headline metric of a task and its direction.
pub fn key_metric(task: Task) -> (&'static str, Better) {
    match task {
        Task::Classification => ("fr", Better::Higher),
        Task::Regression => ("mae", Better::Lower),
    }
}

fn metric_of(row: &ReportRow, name: &str) -> Option<f64> {
    match name {
        "fr" => row.fr,
        "mae" => row.mae,
        _ => None,
    }
}

fn axis_value(row: &ReportRow, axis: &str) -> String {
    match axis {
        "variant" => row.variant.to_string(),
        "T" => row.steps.to_string(),
        "lambda_c" => row.lambda_c.to_string(),
        _ => row.t_sup.to_string(),
    }
}

/// One table per pair of axes: the headline metric averaged over the
/// remaining axes, best cell in bold.
pub fn sweep_markdown(task: Task, rows: &[ReportRow]) -> String {
    let axes = ["variant", "T", "lambda_c", "t_sup"];
    let (metric, better) = key_metric(task);
    let values = |axis: &str| -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in rows {
            let s = axis_value(r, axis);
            if !v.contains(&s) {
                v.push(s);
            }
        }
        v
    };
    let mut md = String::new();
    for a in 0..axes.len() {
        for b in a + 1..axes.len() {
            let (ra, cb) = (values(axes[a]), values(axes[b]));
            let cells: Vec<Vec<Option<f64>>> = ra
                .iter()
                .map(|va| {
                    cb.iter()
                        .map(|vb| {
                            let xs: Vec<f64> = rows
                                .iter()
                                .filter(|r| {
                                    r.is_ok()
                                        && &axis_value(r, axes[a]) == va
                                        && &axis_value(r, axes[b]) == vb
                                })
                                .filter_map(|r| metric_of(r, metric))
                                .collect();
                            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
                        })
                        .collect()
                })
                .collect();
            let flat: Vec<Option<f64>> = cells.iter().flatten().copied().collect();
            let best = better.best(&flat);
            let mut header = vec![format!("{} \\ {}", axes[a], axes[b])];
            header.extend(cb.iter().cloned());
            let body: Vec<Vec<String>> = ra
                .iter()
                .enumerate()
                .map(|(i, va)| {
                    let mut line = vec![va.clone()];
                    for j in 0..cb.len() {
                        let v = cells[i][j];
                        line.push(crate::report::cell(v, best.is_some_and(|b| v == Some(b))));
                    }
                    line
                })
                .collect();
            md.push_str(&format!("### {metric}: {} x {}\n\n", axes[a], axes[b]));
            md.push_str(&markdown_table(&header, &body));
            md.push('\n');
        }
    }
    md
}
