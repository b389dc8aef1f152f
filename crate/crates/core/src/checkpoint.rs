//! Trained components on disk: `<name>.ldvt` tensors plus a `<name>.json`
//! metadata file carrying the architecture, training summary and content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::{archive_load, archive_save, TensorArchive};
use crate::codec::{Codec, CodecArch, ConvCodec};
use crate::denoiser::{Denoiser, DenoiserArch};
use crate::diffusion::{NoisePredictor, ScheduleConfig};
use crate::error::{Error, Result};
use crate::target::{TargetArch, TargetModel, ToyVideoNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Codec,
    Denoiser,
    Target,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Codec => "codec",
            Component::Denoiser => "denoiser",
            Component::Target => "target",
        }
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "codec" => Ok(Component::Codec),
            "denoiser" => Ok(Component::Denoiser),
            "target" => Ok(Component::Target),
            other => Err(Error::Config(format!(
                "unknown component `{other}`; expected codec, denoiser or target"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "component", rename_all = "lowercase")]
pub enum ComponentMeta {
    Codec {
        arch: CodecArch,
        val_psnr: f32,
    },
    Denoiser {
        arch: DenoiserArch,
        schedule: ScheduleConfig,
        schedule_hash: String,
        codec_hash: String,
        final_train_loss: f32,
    },
    Target {
        arch: TargetArch,
        val_metric: f32,
        val_metric_name: String,
    },
}

impl ComponentMeta {
    pub fn component(&self) -> Component {
        match self {
            ComponentMeta::Codec { .. } => Component::Codec,
            ComponentMeta::Denoiser { .. } => Component::Denoiser,
            ComponentMeta::Target { .. } => Component::Target,
        }
    }
}

/// JSON sidecar of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(flatten)]
    pub meta: ComponentMeta,
    /// Hash of the tensor archive; also the component's content hash.
    pub content_hash: String,
    /// Training configuration echo.
    pub train_config: serde_json::Value,
}

pub fn tensors_path(dir: &Path, c: Component) -> PathBuf {
    dir.join(format!("{c}.ldvt"))
}

pub fn meta_path(dir: &Path, c: Component) -> PathBuf {
    dir.join(format!("{c}.json"))
}

fn write(dir: &Path, archive: &TensorArchive, meta: ComponentMeta, train: &impl Serialize) -> Result<CheckpointMeta> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = meta.component();
    let sidecar = CheckpointMeta {
        meta,
        content_hash: archive.content_hash(),
        train_config: serde_json::to_value(train)?,
    };
    archive_save(archive, tensors_path(dir, c))?;
    let path = meta_path(dir, c);
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}

/// Reads the sidecar of component `c` in `dir`.
pub fn read_meta(dir: impl AsRef<Path>, c: Component) -> Result<CheckpointMeta> {
    let path = meta_path(dir.as_ref(), c);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.meta.component() != c {
        return Err(Error::Config(format!(
            "{} holds a {} checkpoint, expected {c}",
            path.display(),
            meta.meta.component()
        )));
    }
    Ok(meta)
}

fn read(dir: &Path, c: Component, expected_hash: Option<&str>) -> Result<(TensorArchive, CheckpointMeta)> {
    let meta = read_meta(dir, c)?;
    let archive = archive_load(tensors_path(dir, c))?;
    let actual = archive.content_hash();
    if actual != meta.content_hash {
        return Err(Error::CorruptArchive(format!(
            "{}: tensors hash {actual} does not match metadata {}",
            tensors_path(dir, c).display(),
            meta.content_hash
        )));
    }
    if let Some(want) = expected_hash {
        if want != actual {
            return Err(Error::Compatibility(format!(
                "{c} checkpoint in {} has hash {actual}, expected {want}",
                dir.display()
            )));
        }
    }
    Ok((archive, meta))
}

pub fn save_codec(dir: impl AsRef<Path>, codec: &ConvCodec, val_psnr: f32, train: &impl Serialize) -> Result<CheckpointMeta> {
    let meta = ComponentMeta::Codec {
        arch: codec.arch,
        val_psnr,
    };
    write(dir.as_ref(), &codec.to_archive()?, meta, train)
}

/// Loads a codec; `expected_hash` additionally pins its content hash.
pub fn load_codec(dir: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(ConvCodec, CheckpointMeta)> {
    let (archive, meta) = read(dir.as_ref(), Component::Codec, expected_hash)?;
    let ComponentMeta::Codec { arch, .. } = &meta.meta else {
        unreachable!("component checked by read_meta")
    };
    let codec = ConvCodec::from_archive(*arch, &archive)?;
    debug_assert_eq!(codec.content_hash(), meta.content_hash);
    Ok((codec, meta))
}

pub fn save_denoiser(
    dir: impl AsRef<Path>,
    denoiser: &Denoiser,
    schedule: ScheduleConfig,
    final_train_loss: f32,
    train: &impl Serialize,
) -> Result<CheckpointMeta> {
    let built = schedule.build()?;
    if built.content_hash() != denoiser.schedule.content_hash() {
        return Err(Error::Config("schedule config does not match the denoiser's schedule".into()));
    }
    let meta = ComponentMeta::Denoiser {
        arch: denoiser.arch.clone(),
        schedule,
        schedule_hash: denoiser.schedule_hash(),
        codec_hash: denoiser.codec_hash.clone(),
        final_train_loss,
    };
    write(dir.as_ref(), &denoiser.to_archive()?, meta, train)
}

pub fn load_denoiser(dir: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(Denoiser, CheckpointMeta)> {
    let (archive, meta) = read(dir.as_ref(), Component::Denoiser, expected_hash)?;
    let ComponentMeta::Denoiser {
        arch,
        schedule,
        schedule_hash,
        codec_hash,
        ..
    } = &meta.meta
    else {
        unreachable!("component checked by read_meta")
    };
    let built = schedule.build()?;
    if &built.content_hash() != schedule_hash {
        return Err(Error::Compatibility(format!(
            "denoiser schedule hash {schedule_hash} does not match its schedule config"
        )));
    }
    let den = Denoiser::from_archive(arch.clone(), built, codec_hash.clone(), &archive)?;
    Ok((den, meta))
}

pub fn save_target(
    dir: impl AsRef<Path>,
    target: &ToyVideoNet,
    val_metric: f32,
    val_metric_name: &str,
    train: &impl Serialize,
) -> Result<CheckpointMeta> {
    let meta = ComponentMeta::Target {
        arch: target.arch.clone(),
        val_metric,
        val_metric_name: val_metric_name.into(),
    };
    write(dir.as_ref(), &target.to_archive()?, meta, train)
}

pub fn load_target(dir: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(ToyVideoNet, CheckpointMeta)> {
    let (archive, meta) = read(dir.as_ref(), Component::Target, expected_hash)?;
    let ComponentMeta::Target { arch, .. } = &meta.meta else {
        unreachable!("component checked by read_meta")
    };
    let target = ToyVideoNet::from_archive(arch.clone(), &archive)?;
    debug_assert_eq!(target.content_hash(), meta.content_hash);
    Ok((target, meta))
}
