//! Experiment configuration: a JSON document merged over a per-task preset,
//! with `VIDCF__SECTION__KEY=value` environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use vidcf_core::codec::CodecTrainConfig;
use vidcf_core::data::{DatasetConfig, Task};
use vidcf_core::denoiser::DenoiserTrainConfig;
use vidcf_core::diffusion::ScheduleConfig;
use vidcf_core::guidance::{GuidanceConfig, TargetSelect};
use vidcf_core::refine::RefineConfig;
use vidcf_core::target::TargetTrainConfig;

use crate::error::UserError;

/// Prefix of environment variables overriding config keys. Path segments
/// are separated by `__`, so `VIDCF__GUIDANCE__LAMBDA_C=30` sets
/// `guidance.lambda_c`.
pub const ENV_PREFIX: &str = "VIDCF__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub dir: PathBuf,
    /// Pinned content hashes; loading fails on mismatch.
    pub codec_hash: Option<String>,
    pub denoiser_hash: Option<String>,
    pub target_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Split the factual videos are drawn from.
    pub split: String,
    /// Leading videos of the split to explain.
    pub count: usize,
    /// Target-model layers of the perceptual distance.
    pub layers: Vec<String>,
}

/// Full description of a run. Every section except `task` and `seed` is
/// filled from the preset of `task` where the document leaves keys out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Master seed of every training and generation stream. The dataset
    /// keeps its own seed so that changing this does not change the data.
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Directory of saved splits to read instead of generating them.
    pub data_dir: Option<PathBuf>,
    pub schedule: ScheduleConfig,
    pub codec: CodecTrainConfig,
    pub denoiser: DenoiserTrainConfig,
    pub target: TargetTrainConfig,
    pub checkpoints: CheckpointConfig,
    pub guidance: GuidanceConfig,
    pub target_select: TargetSelect,
    /// Threshold of the artifact-suppression mask.
    pub t_sup: f32,
    pub eval: EvalConfig,
    pub out: PathBuf,
    /// Worker threads for generation and sweeps.
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn preset(task: Task) -> Self {
        let (dataset, guidance) = match task {
            Task::Classification => (
                DatasetConfig::classification(400, 100, 100),
                GuidanceConfig::classification_preset(),
            ),
            Task::Regression => (
                DatasetConfig::regression(400, 100, 100),
                GuidanceConfig::regression_preset(),
            ),
        };
        let mut cfg = Self {
            task,
            seed: 0,
            dataset,
            data_dir: None,
            schedule: ScheduleConfig::default(),
            codec: CodecTrainConfig::default(),
            denoiser: DenoiserTrainConfig::default(),
            target: TargetTrainConfig::default(),
            checkpoints: CheckpointConfig {
                dir: PathBuf::from("checkpoints").join(task.to_string()),
                codec_hash: None,
                denoiser_hash: None,
                target_hash: None,
            },
            guidance,
            target_select: TargetSelect::default(),
            t_sup: 0.1,
            eval: EvalConfig {
                split: "test".into(),
                count: 64,
                layers: vec!["conv1".into(), "conv2".into()],
            },
            out: PathBuf::from("runs").join(task.to_string()),
            workers: 1,
        };
        cfg.normalize();
        cfg
    }

    /// Propagates `seed` and the dataset geometry into the sections that
    /// depend on them.
    pub fn normalize(&mut self) {
        for s in [
            &mut self.codec.train.seed,
            &mut self.denoiser.train.seed,
            &mut self.target.train.seed,
            &mut self.guidance.seed,
        ] {
            s.master_seed = self.seed;
        }
        self.codec.arch.channels = self.dataset.channels;
        self.workers = self.workers.max(1);
    }

    pub fn validate(&self) -> Result<(), UserError> {
        let bad = |m: String| Err(UserError(m));
        if self.dataset.task != self.task {
            return bad(format!(
                "task is {} but dataset.task is {}",
                self.task, self.dataset.task
            ));
        }
        if self.guidance.task != self.task {
            return bad(format!(
                "task is {} but guidance.task is {}",
                self.task, self.guidance.task
            ));
        }
        self.dataset
            .validate()
            .map_err(|e| UserError(format!("dataset: {e}")))?;
        self.guidance
            .validate()
            .map_err(|e| UserError(format!("guidance: {e}")))?;
        self.refine()
            .validate()
            .map_err(|e| UserError(format!("t_sup: {e}")))?;
        Ok(())
    }

    pub fn refine(&self) -> RefineConfig {
        RefineConfig {
            t_sup: self.t_sup,
            channels: self.dataset.channels,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form (sorted keys, no whitespace).
    pub fn content_hash(&self) -> String {
        canonical_hash(&self.to_value())
    }

    /// Builds a config from a partial document: the document is merged over
    /// the preset of its `task` (classification when absent).
    pub fn from_value(doc: Value) -> Result<Self, UserError> {
        if !doc.is_object() {
            return Err(UserError("config must be a JSON object".into()));
        }
        let task: Task = match doc.get("task") {
            Some(t) => serde_json::from_value(t.clone())
                .map_err(|e| UserError(format!("task: {e}")))?,
            None => Task::Classification,
        };
        let mut merged = Self::preset(task).to_value();
        merge(&mut merged, doc);
        let mut cfg: Self =
            serde_json::from_value(merged).map_err(|e| UserError(format!("config: {e}")))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// SHA-256 hex digest of `v` serialized with sorted keys.
pub fn canonical_hash(v: &Value) -> String {
    let bytes = serde_json::to_vec(v).expect("json value serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Recursively overlays `over` onto `base`; objects merge key-wise, any
/// other value replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `VIDCF__A__B=value` pairs to `doc`. Values parse as JSON when
/// they can and are taken as strings otherwise.
pub fn apply_env_overrides(
    doc: &mut Value,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<(), UserError> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(UserError(format!("malformed override variable `{key}`")));
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let mut slot = &mut *doc;
        for seg in &path {
            if !slot.is_object() {
                *slot = Value::Object(Default::default());
            }
            slot = slot
                .as_object_mut()
                .expect("just made an object")
                .entry(seg.clone())
                .or_insert(Value::Null);
        }
        *slot = value;
    }
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UserError(format!("cannot read {}: {e}", path.display())))?;
    let v = serde_json::from_str(&text)
        .map_err(|e| UserError(format!("{} is not valid JSON: {e}", path.display())))?;
    Ok(v)
}

/// Reads the config file (or starts from `{}`), applies environment
/// overrides and the `--seed` flag, and resolves it against its preset.
pub fn load_config(
    path: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut doc = match path {
        Some(p) => read_json(p)?,
        None => Value::Object(Default::default()),
    };
    apply_env_overrides(&mut doc, env)?;
    if let Some(s) = seed {
        merge(&mut doc, serde_json::json!({ "seed": s }));
    }
    let cfg = ExperimentConfig::from_value(doc)
        .with_context(|| match path {
            Some(p) => format!("in {}", p.display()),
            None => "in the default config".into(),
        })?;
    Ok(cfg)
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
