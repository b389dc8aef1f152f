//! Data loading, checkpoint loading and component training.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vidcf_core::checkpoint::{
    load_codec, load_denoiser, load_target, save_codec, save_denoiser, save_target, tensors_path,
    Component,
};
use vidcf_core::codec::{train_codec, Codec, ConvCodec};
use vidcf_core::data::{load_split, make_split, save_split, Dataset, Task};
use vidcf_core::denoiser::{condition_spec_for, train_denoiser, Denoiser};
use vidcf_core::diffusion::{NoisePredictor, NoiseSchedule};
use vidcf_core::guidance::check_compatibility;
use vidcf_core::target::{TargetArch, TargetModel, ToyVideoNet};

use crate::config::ExperimentConfig;
use crate::error::UserError;

/// Validation accuracy below which a trained classifier is reported as
/// unfit for explanation runs.
pub const TARGET_ACCURACY_GATE: f32 = 0.95;

/// Reads a split from `data_dir` when configured, else generates it.
pub fn load_dataset(cfg: &ExperimentConfig, split: &str) -> Result<Dataset> {
    match &cfg.data_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(UserError(format!("dataset directory {} does not exist", dir.display())).into());
            }
            let (ds, stored) = load_split(dir, split)
                .with_context(|| format!("reading split `{split}` from {}", dir.display()))?;
            if stored.task != cfg.task || stored.dims() != cfg.dataset.dims() {
                return Err(UserError(format!(
                    "{} holds {} videos of shape {}, config expects {} videos of shape {}",
                    dir.display(),
                    stored.task,
                    stored.dims(),
                    cfg.task,
                    cfg.dataset.dims()
                ))
                .into());
            }
            Ok(ds)
        }
        None => Ok(make_split(&cfg.dataset, split)?),
    }
}

/// Writes every configured split into `dir`.
pub fn write_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for s in &cfg.dataset.splits {
        let ds = make_split(&cfg.dataset, &s.name)?;
        save_split(dir, &ds, &cfg.dataset)?;
        paths.push(dir.join(format!("{}.ldvt", s.name)));
    }
    Ok(paths)
}

pub fn target_arch(cfg: &ExperimentConfig) -> TargetArch {
    match cfg.task {
        Task::Classification => TargetArch::classifier(cfg.dataset.dims(), cfg.dataset.classes),
        Task::Regression => TargetArch::regressor(cfg.dataset.dims(), cfg.dataset.ef_range),
    }
}

/// Trained components loaded for a run, checked for mutual compatibility.
pub struct Fixtures {
    pub codec: ConvCodec,
    pub denoiser: Denoiser,
    pub target: ToyVideoNet,
    pub schedule: NoiseSchedule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureHashes {
    pub codec: String,
    pub denoiser: String,
    pub target: String,
}

impl Fixtures {
    pub fn hashes(&self) -> FixtureHashes {
        FixtureHashes {
            codec: self.codec.content_hash(),
            denoiser: self.denoiser.content_hash(),
            target: self.target.content_hash(),
        }
    }
}

fn require_checkpoint(dir: &Path, c: Component) -> Result<()> {
    let p = tensors_path(dir, c);
    if !p.is_file() {
        return Err(UserError(format!(
            "no {c} checkpoint at {}; run `vidcf train {c}` first",
            p.display()
        ))
        .into());
    }
    Ok(())
}

pub fn load_target_for(cfg: &ExperimentConfig) -> Result<ToyVideoNet> {
    let dir = &cfg.checkpoints.dir;
    require_checkpoint(dir, Component::Target)?;
    let (target, _) = load_target(dir, cfg.checkpoints.target_hash.as_deref())
        .with_context(|| format!("loading the target model from {}", dir.display()))?;
    let want = target_arch(cfg);
    let a = &target.arch;
    if (a.task, a.height, a.width, a.channels, a.outputs)
        != (want.task, want.height, want.width, want.channels, want.outputs)
    {
        return Err(UserError(format!(
            "target checkpoint is a {} model for {}x{}x{} frames with {} outputs; the dataset needs {} on {}x{}x{} with {}",
            a.task, a.height, a.width, a.channels, a.outputs,
            want.task, want.height, want.width, want.channels, want.outputs
        ))
        .into());
    }
    Ok(target)
}

/// Loads all three checkpoints and fails before any generation if hashes,
/// schedule or architecture do not line up.
pub fn load_fixtures(cfg: &ExperimentConfig) -> Result<Fixtures> {
    let dir = &cfg.checkpoints.dir;
    for c in [Component::Codec, Component::Denoiser, Component::Target] {
        require_checkpoint(dir, c)?;
    }
    let (codec, _) = load_codec(dir, cfg.checkpoints.codec_hash.as_deref())
        .with_context(|| format!("loading the codec from {}", dir.display()))?;
    let (denoiser, _) = load_denoiser(dir, cfg.checkpoints.denoiser_hash.as_deref())
        .with_context(|| format!("loading the denoiser from {}", dir.display()))?;
    let target = load_target_for(cfg)?;
    let schedule = cfg.schedule.build()?;
    check_compatibility(&codec, &schedule, &denoiser)?;
    if denoiser.arch.condition.task() != cfg.task {
        return Err(UserError(format!(
            "denoiser is conditioned for {}, config task is {}",
            denoiser.arch.condition.task(),
            cfg.task
        ))
        .into());
    }
    Ok(Fixtures {
        codec,
        denoiser,
        target,
        schedule,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub component: Component,
    pub content_hash: String,
    pub metric_name: String,
    pub metric: f32,
    /// False when a classifier misses [`TARGET_ACCURACY_GATE`].
    pub gate_passed: bool,
    pub checkpoint: PathBuf,
}

/// Trains `component` and writes it into the checkpoint directory. The
/// denoiser needs the codec checkpoint to be present.
pub fn train_component(cfg: &ExperimentConfig, component: Component) -> Result<TrainSummary> {
    let dir = cfg.checkpoints.dir.clone();
    let train = load_dataset(cfg, "train")?;
    let (meta, metric_name, metric, gate_passed) = match component {
        Component::Codec => {
            let val = load_dataset(cfg, "val")?;
            let (codec, report) = train_codec(&train, &val, &cfg.codec)
                .map_err(vidcf_core::Error::from)
                .context("codec training failed")?;
            let meta = save_codec(&dir, &codec, report.val_psnr, &cfg.codec)?;
            (meta, "val_psnr".to_string(), report.val_psnr, true)
        }
        Component::Denoiser => {
            require_checkpoint(&dir, Component::Codec)?;
            let (codec, _) = load_codec(&dir, cfg.checkpoints.codec_hash.as_deref())?;
            let schedule = cfg.schedule.build()?;
            let cond = condition_spec_for(&train, cfg.dataset.classes, cfg.dataset.ef_range);
            let (den, report) = train_denoiser(&train, &codec, &schedule, cond, &cfg.denoiser)
                .map_err(vidcf_core::Error::from)
                .context("denoiser training failed")?;
            let meta = save_denoiser(&dir, &den, cfg.schedule, report.final_train_loss, &cfg.denoiser)?;
            (meta, "final_train_loss".to_string(), report.final_train_loss, true)
        }
        Component::Target => {
            let val = load_dataset(cfg, "val")?;
            let (target, report) =
                vidcf_core::target::train_target(&train, &val, target_arch(cfg), &cfg.target)
                    .map_err(vidcf_core::Error::from)
                    .context("target training failed")?;
            let meta = save_target(&dir, &target, report.val_metric, &report.val_metric_name, &cfg.target)?;
            let gate = cfg.task != Task::Classification || report.val_metric >= TARGET_ACCURACY_GATE;
            (meta, report.val_metric_name, report.val_metric, gate)
        }
    };
    Ok(TrainSummary {
        component,
        content_hash: meta.content_hash,
        metric_name,
        metric,
        gate_passed,
        checkpoint: tensors_path(&dir, component),
    })
}

/// The factual videos a run explains: the first `eval.count` of the split.
pub fn eval_set(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = load_dataset(cfg, &cfg.eval.split)?;
    let ds = ds.take(cfg.eval.count.min(ds.len()));
    if ds.is_empty() {
        return Err(UserError(format!(
            "evaluation set is empty (split `{}`, count {})",
            cfg.eval.split, cfg.eval.count
        ))
        .into());
    }
    Ok(ds)
}
