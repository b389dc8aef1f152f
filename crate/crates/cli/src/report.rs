//! Markdown/CSV tables and PNG frame grids for run and sweep directories.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use vidcf_core::data::{Label, Task};
use vidcf_core::export::{frame_grid, heat_video, save_grid};
use vidcf_core::guidance::CounterfactualResult;
use vidcf_core::metrics::ssim_global;
use vidcf_core::refine::l1_distance;
use vidcf_core::target::prediction_label;

use crate::error::UserError;
use crate::run::{load_results, read_manifest, read_run_config, MANIFEST_FILE};
use crate::sweep::{read_rows_csv, ReportRow, SWEEP_CSV};

pub const REPORT_MD: &str = "report.md";
pub const REPORT_CSV: &str = "report.csv";
pub const GRIDS_DIR: &str = "grids";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Better {
    Higher,
    Lower,
}

impl Better {
    /// Best finite value, if any.
    pub fn best(self, values: &[Option<f64>]) -> Option<f64> {
        let finite = values.iter().flatten().copied().filter(|v| v.is_finite());
        match self {
            Better::Higher => finite.fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v)))),
            Better::Lower => finite.fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v)))),
        }
    }
}

/// Four-decimal cell, bold when `best`; empty for missing values.
pub fn cell(v: Option<f64>, best: bool) -> String {
    match v {
        Some(x) if best => format!("**{x:.4}**"),
        Some(x) => format!("{x:.4}"),
        None => String::new(),
    }
}

pub fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n", header.join(" | "));
    s.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

/// Formats the given numeric columns of `rows`, marking the best value of
/// each column (ties all marked).
fn numeric_table(
    lead: &[&str],
    lead_values: &[Vec<String>],
    columns: &[(&str, Better)],
    values: &[Vec<Option<f64>>],
) -> String {
    let mut header: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    header.extend(columns.iter().map(|(c, _)| c.to_string()));
    let best: Vec<Option<f64>> = columns
        .iter()
        .enumerate()
        .map(|(j, (_, b))| b.best(&values.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let body: Vec<Vec<String>> = lead_values
        .iter()
        .zip(values)
        .map(|(lead, vals)| {
            let mut line = lead.clone();
            for (j, v) in vals.iter().enumerate() {
                line.push(cell(*v, best[j].is_some() && *v == best[j]));
            }
            line
        })
        .collect();
    markdown_table(&header, &body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub table_rows: usize,
    pub grids: Vec<PathBuf>,
    /// Entries that could not be read, with the reason.
    pub skipped: Vec<String>,
}

/// Writes `report.md`, `report.csv` and (for runs) frame grids into `dir`,
/// which is either a run or a sweep directory.
pub fn report(dir: &Path) -> Result<ReportOutcome> {
    if dir.join(SWEEP_CSV).is_file() {
        report_sweep(dir)
    } else if dir.join(MANIFEST_FILE).is_file() {
        report_run(dir)
    } else {
        Err(UserError(format!(
            "{} is neither a run directory ({MANIFEST_FILE}) nor a sweep directory ({SWEEP_CSV})",
            dir.display()
        ))
        .into())
    }
}

const SWEEP_COLUMNS: [(&str, Better); 11] = [
    ("fr", Better::Higher),
    ("r2", Better::Higher),
    ("mae", Better::Lower),
    ("rmse", Better::Lower),
    ("ssim", Better::Higher),
    ("perceptual", Better::Lower),
    ("l1", Better::Lower),
    ("fid", Better::Lower),
    ("fvd", Better::Lower),
    ("mask_density", Better::Lower),
    ("seconds_per_video", Better::Lower),
];

fn sweep_values(r: &ReportRow) -> Vec<Option<f64>> {
    vec![
        r.fr,
        r.r2,
        r.mae,
        r.rmse,
        r.ssim,
        r.perceptual,
        r.l1,
        r.fid,
        r.fvd,
        r.mask_density,
        r.seconds_per_video,
    ]
}

fn report_sweep(dir: &Path) -> Result<ReportOutcome> {
    let rows = read_rows_csv(&dir.join(SWEEP_CSV))?;
    let (ok, failed): (Vec<&ReportRow>, Vec<&ReportRow>) = rows.iter().partition(|r| r.is_ok());
    // drop all-empty columns (e.g. R² on classification)
    let keep: Vec<usize> = (0..SWEEP_COLUMNS.len())
        .filter(|&j| ok.iter().any(|r| sweep_values(r)[j].is_some()))
        .collect();
    let columns: Vec<(&str, Better)> = keep.iter().map(|&j| SWEEP_COLUMNS[j]).collect();
    let values: Vec<Vec<Option<f64>>> = ok
        .iter()
        .map(|r| {
            let v = sweep_values(r);
            keep.iter().map(|&j| v[j]).collect()
        })
        .collect();
    let lead: Vec<Vec<String>> = ok
        .iter()
        .map(|r| {
            vec![
                r.variant.to_string(),
                r.steps.to_string(),
                r.lambda_c.to_string(),
                r.t_sup.to_string(),
            ]
        })
        .collect();
    let mut md = String::from("## Sweep\n\n");
    md.push_str(&numeric_table(
        &["variant", "T", "lambda_c", "t_sup"],
        &lead,
        &columns,
        &values,
    ));
    let skipped: Vec<String> = failed
        .iter()
        .map(|r| {
            format!(
                "{} T={} lambda_c={} t_sup={}: {}",
                r.variant, r.steps, r.lambda_c, r.t_sup, r.status
            )
        })
        .collect();
    push_skipped(&mut md, &skipped);
    std::fs::write(dir.join(REPORT_MD), md)
        .with_context(|| format!("writing {}", dir.join(REPORT_MD).display()))?;
    crate::sweep::write_rows_csv(&dir.join(REPORT_CSV), &ok.iter().map(|r| (*r).clone()).collect::<Vec<_>>())?;
    Ok(ReportOutcome {
        table_rows: ok.len(),
        grids: Vec::new(),
        skipped,
    })
}

fn push_skipped(md: &mut String, skipped: &[String]) {
    if !skipped.is_empty() {
        md.push_str("\n### Skipped\n\n");
        for s in skipped {
            md.push_str(&format!("- {s}\n"));
        }
    }
}

/// Per-video quantities shown in a run report.
struct VideoRow {
    pos: usize,
    index: usize,
    y_target: Label,
    pred_f: Label,
    pred_cf: Label,
    pred_mask_cf: Option<Label>,
    /// Target error of the counterfactual: |y' - f(x_cf)| or 0/1 miss.
    error: f64,
    l1: f64,
    ssim: f64,
    mask_density: Option<f64>,
}

fn video_row(task: Task, pos: usize, index: usize, r: &CounterfactualResult) -> Result<VideoRow> {
    let pred_cf = prediction_label(task, &r.pred_cf)?;
    let error = match (r.y_target, pred_cf) {
        (Label::Class(a), Label::Class(b)) => f64::from(u8::from(a != b)),
        (y, p) => (y.as_f32() as f64 - p.as_f32() as f64).abs(),
    };
    Ok(VideoRow {
        pos,
        index,
        y_target: r.y_target,
        pred_f: prediction_label(task, &r.pred_f)?,
        pred_cf,
        pred_mask_cf: r
            .pred_mask_cf
            .as_ref()
            .map(|p| prediction_label(task, p))
            .transpose()?,
        error,
        l1: l1_distance(&r.x_cf, &r.x_f)? / r.x_f.data().len() as f64,
        ssim: ssim_global(&r.x_f, &r.x_cf)?,
        mask_density: r.mask_density.map(f64::from),
    })
}

/// Rows factual / counterfactual / refined / difference map.
fn write_grid(r: &CounterfactualResult, path: &Path) -> Result<()> {
    let mut rows = vec![&r.x_f, &r.x_cf];
    if let Some(x) = &r.x_mask_cf {
        rows.push(x);
    }
    let heat = match &r.delta {
        Some(d) => Some(heat_video(&d.values, d.frames, d.height, d.width, d.max())?),
        None => None,
    };
    if let Some(h) = &heat {
        rows.push(h);
    }
    let img = frame_grid(&rows)?;
    save_grid(&img, path)?;
    Ok(())
}

fn report_run(dir: &Path) -> Result<ReportOutcome> {
    let cfg = read_run_config(dir)?;
    let manifest = read_manifest(dir)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut grids = Vec::new();
    std::fs::create_dir_all(dir.join(GRIDS_DIR))
        .with_context(|| format!("creating {}", dir.join(GRIDS_DIR).display()))?;
    for (pos, r) in load_results(dir, &manifest) {
        let row = r.and_then(|r| {
            let row = video_row(cfg.task, pos, manifest.indices[pos], &r)?;
            let path = dir.join(GRIDS_DIR).join(format!("{pos:04}.png"));
            write_grid(&r, &path)?;
            grids.push(path);
            Ok(row)
        });
        match row {
            Ok(row) => rows.push(row),
            Err(e) => skipped.push(format!("video {pos}: {e:#}")),
        }
    }
    let err_name = match cfg.task {
        Task::Classification => "miss",
        Task::Regression => "abs_err",
    };
    let columns = [
        (err_name, Better::Lower),
        ("l1", Better::Lower),
        ("ssim", Better::Higher),
        ("mask_density", Better::Lower),
    ];
    let lead: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.pos.to_string(),
                r.index.to_string(),
                r.y_target.to_string(),
                r.pred_f.to_string(),
                r.pred_cf.to_string(),
                r.pred_mask_cf.map(|l| l.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let values: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| vec![Some(r.error), Some(r.l1), Some(r.ssim), r.mask_density])
        .collect();
    let mut md = format!(
        "## Run {} ({}, {})\n\nmedian seconds per video: {:.3}\n\n",
        &manifest.config_hash[..12.min(manifest.config_hash.len())],
        cfg.task,
        manifest.variant,
        manifest.timing.median_seconds
    );
    md.push_str(&numeric_table(
        &["video", "index", "y_target", "pred_f", "pred_cf", "pred_mask_cf"],
        &lead,
        &columns,
        &values,
    ));
    push_skipped(&mut md, &skipped);
    std::fs::write(dir.join(REPORT_MD), md)
        .with_context(|| format!("writing {}", dir.join(REPORT_MD).display()))?;
    let mut w = csv::Writer::from_path(dir.join(REPORT_CSV))?;
    w.write_record([
        "video",
        "index",
        "y_target",
        "pred_f",
        "pred_cf",
        "pred_mask_cf",
        err_name,
        "l1",
        "ssim",
        "mask_density",
    ])?;
    for (l, v) in lead.iter().zip(&values) {
        let mut rec = l.clone();
        rec.extend(v.iter().map(|x| x.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(ReportOutcome {
        table_rows: rows.len(),
        grids,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_value_respects_direction_and_skips_gaps() {
        let v = [Some(0.5), None, Some(0.2), Some(f64::NAN), Some(0.9)];
        assert_eq!(Better::Lower.best(&v), Some(0.2));
        assert_eq!(Better::Higher.best(&v), Some(0.9));
        assert_eq!(Better::Lower.best(&[None]), None);
    }

    #[test]
    fn minimum_mae_cell_is_bold() {
        let t = numeric_table(
            &["run"],
            &[vec!["a".into()], vec!["b".into()]],
            &[("mae", Better::Lower), ("fr", Better::Higher)],
            &[vec![Some(3.0), Some(0.5)], vec![Some(1.25), Some(0.25)]],
        );
        assert_eq!(
            t,
            "| run | mae | fr |\n|---|---|---|\n| a | 3.0000 | **0.5000** |\n| b | **1.2500** | 0.2500 |\n"
        );
    }
}
