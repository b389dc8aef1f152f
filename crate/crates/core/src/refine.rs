//! Artifact suppression: keep factual voxels wherever the guided output
//! barely differs from an unguided reference generated from the same `z_T`.

use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::diffusion::{sample_unguided, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::guidance::CounterfactualResult;
use crate::target::TargetModel;
use crate::tensor::{Tensor, VideoTensor};

/// Per-voxel channel-summed absolute difference, `F x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMap {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl DeltaMap {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.height, self.width],
            self.values.clone(),
        )
        .expect("consistent shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [frames, height, width] => Ok(Self {
                frames,
                height,
                width,
                values: t.data().to_vec(),
            }),
            _ => Err(Error::InvalidShape(format!(
                "delta map needs 3 axes, got {:?}",
                t.shape()
            ))),
        }
    }

    pub fn max(&self) -> f32 {
        self.values.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// Binary `F x H x W` mask, 1 where the counterfactual voxel is kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinementMask {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<u8>,
}

impl RefinementMask {
    /// Fraction of ones.
    pub fn density(&self) -> f32 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|&&m| m == 1).count() as f32 / self.values.len() as f32
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.height, self.width],
            self.values.iter().map(|&m| m as f32).collect(),
        )
        .expect("consistent shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Threshold on the channel-summed difference.
    pub t_sup: f32,
    /// Channel count the threshold was chosen for.
    pub channels: usize,
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.t_sup.is_finite() || self.t_sup < 0.0 {
            return Err(Error::Config(format!(
                "t_sup must be finite and >= 0, got {}",
                self.t_sup
            )));
        }
        Ok(())
    }
}

pub fn delta_map(x_cf: &VideoTensor, x_den: &VideoTensor) -> Result<DeltaMap> {
    let d = x_cf.dims();
    if d != x_den.dims() {
        return Err(Error::ShapeMismatch(format!(
            "delta map of {d} vs {}",
            x_den.dims()
        )));
    }
    let values = x_cf
        .data()
        .chunks_exact(d.channels)
        .zip(x_den.data().chunks_exact(d.channels))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
        .collect();
    Ok(DeltaMap {
        frames: d.frames,
        height: d.height,
        width: d.width,
        values,
    })
}

/// `M = [delta > t_sup]`, strict.
pub fn make_mask(delta: &DeltaMap, t_sup: f32) -> Result<RefinementMask> {
    if !(t_sup >= 0.0) {
        return Err(Error::Config(format!("t_sup must be >= 0, got {t_sup}")));
    }
    Ok(RefinementMask {
        frames: delta.frames,
        height: delta.height,
        width: delta.width,
        values: delta.values.iter().map(|&v| u8::from(v > t_sup)).collect(),
    })
}

/// `(1 - M) x_f + M x_cf`, with the mask broadcast over channels. Each voxel
/// is copied from one source, never interpolated.
pub fn blend(x_f: &VideoTensor, x_cf: &VideoTensor, mask: &RefinementMask) -> Result<VideoTensor> {
    let d = x_f.dims();
    if d != x_cf.dims() || (mask.frames, mask.height, mask.width) != (d.frames, d.height, d.width) {
        return Err(Error::ShapeMismatch(format!(
            "blend of {d}, {} with mask {}x{}x{}",
            x_cf.dims(),
            mask.frames,
            mask.height,
            mask.width
        )));
    }
    let mut out = Vec::with_capacity(d.len());
    for ((f, c), &m) in x_f
        .data()
        .chunks_exact(d.channels)
        .zip(x_cf.data().chunks_exact(d.channels))
        .zip(&mask.values)
    {
        out.extend_from_slice(if m == 1 { c } else { f });
    }
    VideoTensor::new(d, out)
}

/// Decoded unguided sample from the run's `z_T`, timestep map and target
/// condition.
pub fn unguided_reference(
    run: &CounterfactualResult,
    codec: &dyn Codec,
    schedule: &NoiseSchedule,
    denoiser: &dyn NoisePredictor,
) -> Result<VideoTensor> {
    let z_big_t = run.z_big_t.as_ref().ok_or_else(|| {
        Error::State("run has no stored z_T; cannot build the unguided reference".into())
    })?;
    let map = run.config.timestep_map(schedule)?;
    let (z0, _) = sample_unguided(z_big_t, &run.y_target, &map, schedule, denoiser)?;
    codec.decode(&z0)
}

/// Fills the refined fields of `run` given a precomputed reference.
pub fn refine_with_reference(
    mut run: CounterfactualResult,
    x_den: VideoTensor,
    cfg: &RefineConfig,
    target: &dyn TargetModel,
) -> Result<CounterfactualResult> {
    cfg.validate()?;
    let delta = delta_map(&run.x_cf, &x_den)?;
    let mask = make_mask(&delta, cfg.t_sup)?;
    let refined = blend(&run.x_f, &run.x_cf, &mask)?;
    run.pred_mask_cf = Some(target.predict(&refined.to_tensor())?);
    run.mask_density = Some(mask.density());
    run.x_mask_cf = Some(refined);
    run.delta = Some(delta);
    run.mask = Some(mask);
    run.x_den = Some(x_den);
    run.refine = Some(*cfg);
    Ok(run)
}

/// Unguided reference, delta map, mask and blend in one call.
pub fn refine(
    run: CounterfactualResult,
    cfg: &RefineConfig,
    codec: &dyn Codec,
    schedule: &NoiseSchedule,
    denoiser: &dyn NoisePredictor,
    target: &dyn TargetModel,
) -> Result<CounterfactualResult> {
    cfg.validate()?;
    let x_den = unguided_reference(&run, codec, schedule, denoiser)?;
    refine_with_reference(run, x_den, cfg, target)
}

/// `sum |a - b|` over all elements, in f64.
pub fn l1_distance(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum())
}
