//! Target-guided counterfactual generation.
//!
//! Each reverse step predicts noise, takes a deterministic DDIM step, decodes
//! the clean-latent estimate `v_t`, differentiates the scaled task loss of
//! the target model through the decoder, and subtracts the result from the
//! next latent.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{archive_load, archive_save, TensorArchive};
use crate::codec::Codec;
use crate::data::{Label, Task};
use crate::diffusion::{ddim_step, q_sample, NoisePredictor, NoiseSchedule, Spacing, TimestepMap};
use crate::error::{Error, Result};
use crate::refine::{DeltaMap, RefineConfig, RefinementMask};
use crate::rng::{fill_normal, gaussian_sample, SeedSpec};
use crate::target::{argmax, softmax, TargetModel};
use crate::tensor::{LatentTensor, Tensor, VideoTensor};

/// Task loss and its gradient w.r.t. the prediction: cross-entropy of the
/// softmax against the target class, or squared error.
pub fn task_loss(pred: &[f32], target: &Label, task: Task) -> Result<(f32, Vec<f32>)> {
    match (task, target) {
        (Task::Classification, Label::Class(c)) => {
            if *c >= pred.len() {
                return Err(Error::Condition(format!(
                    "target class {c} outside 0..{}",
                    pred.len()
                )));
            }
            let p = softmax(pred);
            let loss = -(p[*c].max(f64::MIN_POSITIVE)).ln();
            let grad = p
                .iter()
                .enumerate()
                .map(|(i, &pi)| (pi - f64::from(u8::from(i == *c))) as f32)
                .collect();
            Ok((loss as f32, grad))
        }
        (Task::Regression, Label::Value(y)) => {
            if !y.is_finite() {
                return Err(Error::Condition(format!(
                    "non-finite regression target {y}"
                )));
            }
            let f = *pred
                .first()
                .ok_or_else(|| Error::EmptyInput("empty prediction".into()))?;
            let r = f as f64 - *y as f64;
            Ok(((r * r) as f32, vec![(2.0 * r) as f32]))
        }
        (task, t) => Err(Error::Condition(format!(
            "{} target for a {task} model",
            t.task()
        ))),
    }
}

/// Gradient of `lambda * L(f(D(v)), y')` w.r.t. `v`, plus the unscaled loss.
pub fn raw_guidance_grad(
    v: &LatentTensor,
    codec: &dyn Codec,
    target: &dyn TargetModel,
    y_target: &Label,
    lambda_c: f32,
) -> Result<(LatentTensor, f32)> {
    smoothgrad_guidance(
        v,
        codec,
        target,
        y_target,
        lambda_c,
        1,
        0.0,
        &SeedSpec::new(0, "unused"),
    )
}

/// Mean over `n` perturbed copies `D(v) + eps_i`, `eps_i ~ N(0, sigma^2)`, of
/// the pixel-space loss gradient, pulled back through the decoder once.
/// Returns the gradient and the mean unscaled loss.
#[allow(clippy::too_many_arguments)]
pub fn smoothgrad_guidance(
    v: &LatentTensor,
    codec: &dyn Codec,
    target: &dyn TargetModel,
    y_target: &Label,
    lambda_c: f32,
    n: usize,
    sigma: f32,
    seed: &SeedSpec,
) -> Result<(LatentTensor, f32)> {
    if n == 0 {
        return Err(Error::Config("SmoothGrad needs N >= 1".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!(
            "SmoothGrad sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let x = codec.decode_tensor(v)?;
    let task = target.task();
    let loss_fn = |p: &[f32]| -> Result<(f32, Vec<f32>)> {
        let (l, g) = task_loss(p, y_target, task)?;
        Ok((l, g.into_iter().map(|v| v * lambda_c).collect()))
    };
    let mut rng = seed.derive("smoothgrad").rng();
    let mut acc: Option<Vec<f32>> = None;
    let mut loss_sum = 0.0f64;
    for _ in 0..n {
        let (_, l, g) = if sigma > 0.0 {
            let mut noisy = x.clone();
            let mut eps = vec![0.0f32; noisy.len()];
            fill_normal(&mut rng, &mut eps, sigma);
            for (a, e) in noisy.data_mut().iter_mut().zip(&eps) {
                *a += e;
            }
            target.loss_and_input_grad(&noisy, &loss_fn)?
        } else {
            target.loss_and_input_grad(&x, &loss_fn)?
        };
        loss_sum += l as f64;
        match acc.as_mut() {
            None => acc = Some(g.into_data()),
            Some(a) => a.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        }
    }
    let mut g = acc.expect("n >= 1");
    if n > 1 {
        let inv = 1.0 / n as f32;
        g.iter_mut().for_each(|v| *v *= inv);
    }
    let cot = Tensor::new(x.shape().to_vec(), g)?;
    let grad = codec.decode_pullback(v, &cot)?;
    Ok((grad, (loss_sum / n as f64) as f32))
}

/// `z_prev - sqrt((1 - a_t) / a_t) * grad`, with `a_t` at the current step.
pub fn apply_guidance(
    z_tilde_prev: &LatentTensor,
    grad: &LatentTensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    z_tilde_prev.check_same_dims(grad, "guidance update")?;
    let c = schedule.guidance_coefficient(t)?;
    let data = z_tilde_prev
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&z, &g)| (z as f64 - c * g as f64) as f32)
        .collect();
    LatentTensor::new(z_tilde_prev.dims(), data).map_err(|_| Error::Numeric {
        step: t,
        what: "guided latent".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetSign {
    Plus,
    Minus,
    /// Fair coin from the target-selection stream.
    Random,
}

/// How regression targets are derived from the factual prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetSelect {
    pub offset: f32,
    pub sign: OffsetSign,
    /// Targets are clamped into this label range.
    pub range: (f32, f32),
}

impl Default for TargetSelect {
    fn default() -> Self {
        Self {
            offset: 20.0,
            sign: OffsetSign::Random,
            range: (10.0, 90.0),
        }
    }
}

/// Classification: uniform over non-predicted classes. Regression:
/// prediction shifted by the configured offset, clamped to the label range.
pub fn select_target(
    pred: &[f32],
    task: Task,
    cfg: &TargetSelect,
    seed: &SeedSpec,
) -> Result<Label> {
    let mut rng = seed.derive("target-select").rng();
    match task {
        Task::Classification => {
            let k = pred.len();
            if k < 2 {
                return Err(Error::NoAlternative(format!(
                    "{k} class(es): no alternative target"
                )));
            }
            let top = argmax(pred)?;
            let pick = rng.gen_range(0..k - 1);
            Ok(Label::Class(if pick >= top { pick + 1 } else { pick }))
        }
        Task::Regression => {
            let y = *pred
                .first()
                .ok_or_else(|| Error::EmptyInput("empty prediction".into()))?;
            if !y.is_finite() {
                return Err(Error::Condition(format!("non-finite prediction {y}")));
            }
            let sign = match cfg.sign {
                OffsetSign::Plus => 1.0,
                OffsetSign::Minus => -1.0,
                OffsetSign::Random => {
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            Ok(Label::Value(
                (y + sign * cfg.offset).clamp(cfg.range.0, cfg.range.1),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Raw gradient.
    RG,
    /// SmoothGrad.
    SG,
    /// SmoothGrad followed by artifact-suppression refinement.
    SGA,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::RG => "RG",
            Variant::SG => "SG",
            Variant::SGA => "SGA",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RG" => Ok(Variant::RG),
            "SG" => Ok(Variant::SG),
            "SGA" => Ok(Variant::SGA),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (expected RG, SG or SGA)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub lambda_c: f32,
    /// SmoothGrad sample count.
    pub n: usize,
    /// SmoothGrad noise std in pixel units.
    pub sigma: f32,
    pub variant: Variant,
    /// Inference step count `T`.
    pub steps: usize,
    pub spacing: Spacing,
    pub task: Task,
    pub seed: SeedSpec,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self::classification_preset()
    }
}

impl GuidanceConfig {
    /// `lambda_c = 55`, `T = 5`, SmoothGrad with `N = 10`, `sigma = 0.1`.
    pub fn classification_preset() -> Self {
        Self {
            lambda_c: 55.0,
            n: 10,
            sigma: 0.1,
            variant: Variant::SG,
            steps: 5,
            spacing: Spacing::Stride(20),
            task: Task::Classification,
            seed: SeedSpec::new(0, "generate"),
        }
    }

    /// `lambda_c = 0.15`, `T = 15`, SmoothGrad with `N = 10`, `sigma = 0.1`.
    pub fn regression_preset() -> Self {
        Self {
            lambda_c: 0.15,
            steps: 15,
            task: Task::Regression,
            ..Self::classification_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0) || !self.lambda_c.is_finite() {
            return Err(Error::Config(format!(
                "lambda_c must be finite and >= 0, got {}",
                self.lambda_c
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("N must be >= 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("T must be >= 1".into()));
        }
        Ok(())
    }

    pub fn timestep_map(&self, schedule: &NoiseSchedule) -> Result<TimestepMap> {
        self.spacing.build(schedule, self.steps)
    }

    /// `(N, sigma)` actually used: RG is SmoothGrad with one noiseless sample.
    pub fn smoothing(&self) -> (usize, f32) {
        match self.variant {
            Variant::RG => (1, 0.0),
            Variant::SG | Variant::SGA => (self.n, self.sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    /// Unscaled task loss at the decoded clean estimate.
    pub loss: f32,
    /// L2 norm of the scaled latent gradient.
    pub grad_norm: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualResult {
    pub x_f: VideoTensor,
    pub x_cf: VideoTensor,
    pub x_mask_cf: Option<VideoTensor>,
    /// Unguided reference used for refinement.
    pub x_den: Option<VideoTensor>,
    pub delta: Option<DeltaMap>,
    pub mask: Option<RefinementMask>,
    pub mask_density: Option<f32>,
    pub refine: Option<RefineConfig>,
    /// Target-model output on the factual video.
    pub pred_f: Vec<f32>,
    pub y_target: Label,
    pub pred_cf: Vec<f32>,
    pub pred_mask_cf: Option<Vec<f32>>,
    pub trace: Vec<TraceStep>,
    pub config: GuidanceConfig,
    pub z_big_t: Option<LatentTensor>,
}

/// JSON side of a persisted [`CounterfactualResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub pred_f: Vec<f32>,
    pub y_target: Label,
    pub pred_cf: Vec<f32>,
    pub pred_mask_cf: Option<Vec<f32>>,
    pub mask_density: Option<f32>,
    pub refine: Option<RefineConfig>,
    pub trace: Vec<TraceStep>,
    pub config: GuidanceConfig,
    /// Content hash of the tensor archive.
    pub tensors_hash: String,
}

pub const RESULT_TENSORS: &str = "result.ldvt";
pub const RESULT_META: &str = "result.json";

impl CounterfactualResult {
    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        a.insert("x_f", (&self.x_f).into())?;
        a.insert("x_cf", (&self.x_cf).into())?;
        if let Some(z) = &self.z_big_t {
            a.insert("z_T", z.into())?;
        }
        if let Some(x) = &self.x_mask_cf {
            a.insert("x_mask_cf", x.into())?;
        }
        if let Some(x) = &self.x_den {
            a.insert("x_den", x.into())?;
        }
        if let Some(d) = &self.delta {
            a.insert("delta", (&d.to_tensor()).into())?;
        }
        if let Some(m) = &self.mask {
            a.insert(
                "mask",
                crate::archive::ArchiveTensor::u8(
                    vec![m.frames, m.height, m.width],
                    m.values.clone(),
                )?,
            )?;
        }
        Ok(a)
    }

    pub fn meta(&self) -> Result<ResultMeta> {
        Ok(ResultMeta {
            pred_f: self.pred_f.clone(),
            y_target: self.y_target,
            pred_cf: self.pred_cf.clone(),
            pred_mask_cf: self.pred_mask_cf.clone(),
            mask_density: self.mask_density,
            refine: self.refine,
            trace: self.trace.clone(),
            config: self.config.clone(),
            tensors_hash: self.to_archive()?.content_hash(),
        })
    }

    /// Writes `result.ldvt` and `result.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let a = self.to_archive()?;
        archive_save(&a, dir.join(RESULT_TENSORS))?;
        let meta = self.meta()?;
        let path = dir.join(RESULT_META);
        let json = serde_json::to_string_pretty(&meta)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(RESULT_META);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ResultMeta = serde_json::from_str(&text)?;
        let a = archive_load(dir.join(RESULT_TENSORS))?;
        if a.content_hash() != meta.tensors_hash {
            return Err(Error::CorruptArchive(format!(
                "{}: tensor hash does not match its metadata",
                dir.display()
            )));
        }
        let opt_video = |name: &str| -> Result<Option<VideoTensor>> {
            if a.get(name).is_some() {
                Ok(Some(a.video(name)?))
            } else {
                Ok(None)
            }
        };
        let delta = match a.get("delta") {
            Some(_) => Some(DeltaMap::from_tensor(&a.tensor("delta")?)?),
            None => None,
        };
        let mask = match a.get("mask") {
            Some(t) => match (t.shape.as_slice(), &t.data) {
                ([frames, height, width], crate::archive::TensorData::U8(values)) => {
                    Some(RefinementMask {
                        frames: *frames,
                        height: *height,
                        width: *width,
                        values: values.to_vec(),
                    })
                }
                _ => {
                    return Err(Error::CorruptArchive(
                        "mask must be a 3-axis u8 tensor".into(),
                    ))
                }
            },
            None => None,
        };
        Ok(Self {
            x_f: a.video("x_f")?,
            x_cf: a.video("x_cf")?,
            x_mask_cf: opt_video("x_mask_cf")?,
            x_den: opt_video("x_den")?,
            delta,
            mask,
            mask_density: meta.mask_density,
            refine: meta.refine,
            pred_f: meta.pred_f,
            y_target: meta.y_target,
            pred_cf: meta.pred_cf,
            pred_mask_cf: meta.pred_mask_cf,
            trace: meta.trace,
            config: meta.config,
            z_big_t: if a.get("z_T").is_some() {
                Some(a.latent("z_T")?)
            } else {
                None
            },
        })
    }
}

/// Fails unless the denoiser was trained on this codec's latents and schedule.
pub fn check_compatibility(
    codec: &dyn Codec,
    schedule: &NoiseSchedule,
    denoiser: &dyn NoisePredictor,
) -> Result<()> {
    if let Some(h) = denoiser.codec_hash() {
        let have = codec.content_hash();
        if h != have {
            return Err(Error::Compatibility(format!(
                "denoiser was trained on codec {h}, but codec {have} was supplied"
            )));
        }
    }
    let s = schedule.content_hash();
    if denoiser.schedule_hash() != s {
        return Err(Error::Compatibility(format!(
            "denoiser was trained with schedule {}, but schedule {s} was supplied",
            denoiser.schedule_hash()
        )));
    }
    Ok(())
}

/// Runs the guided reverse loop from the noised factual latent and decodes
/// the counterfactual.
pub fn generate_counterfactual(
    x_f: &VideoTensor,
    y_target: &Label,
    cfg: &GuidanceConfig,
    codec: &dyn Codec,
    schedule: &NoiseSchedule,
    denoiser: &dyn NoisePredictor,
    target: &dyn TargetModel,
) -> Result<CounterfactualResult> {
    cfg.validate()?;
    check_compatibility(codec, schedule, denoiser)?;
    if target.task() != cfg.task {
        return Err(Error::Config(format!(
            "guidance configured for {} but the target model is a {}",
            cfg.task,
            target.task()
        )));
    }
    let pred_f = target.predict(&x_f.to_tensor())?;
    task_loss(&pred_f, y_target, cfg.task)?;
    if cfg.task == Task::Classification && y_target.class() == Some(argmax(&pred_f)?) {
        return Err(Error::Condition(
            "target class equals the factual prediction".into(),
        ));
    }
    let map = cfg.timestep_map(schedule)?;
    let z0 = codec.encode(x_f)?;
    let eps = LatentTensor::from_tensor(gaussian_sample(
        &cfg.seed.derive("noise-init"),
        &z0.dims().to_shape(),
    )?)?;
    let z_big_t = q_sample(&z0, map.depth(), &eps, schedule)?;
    let (n, sigma) = cfg.smoothing();
    let mut z = z_big_t.clone();
    let mut trace = Vec::with_capacity(map.len());
    for (t, t_prev) in map.reverse_pairs() {
        let eps_hat = denoiser.predict_noise(&z, y_target, t)?;
        let (z_tilde, v) = ddim_step(&z, &eps_hat, t, t_prev, schedule)?;
        let (grad, loss) = if cfg.lambda_c == 0.0 {
            let x = codec.decode_tensor(&v)?;
            let (l, _) = task_loss(&target.predict(&x)?, y_target, cfg.task)?;
            (LatentTensor::zeros(v.dims())?, l)
        } else {
            smoothgrad_guidance(
                &v,
                codec,
                target,
                y_target,
                cfg.lambda_c,
                n,
                sigma,
                &cfg.seed.derive(format_args!("step/{t}")),
            )?
        };
        let grad_norm = grad.to_tensor().l2_norm();
        if !grad_norm.is_finite() {
            return Err(Error::Numeric {
                step: t,
                what: "guidance gradient".into(),
            });
        }
        z = apply_guidance(&z_tilde, &grad, t, schedule)?;
        trace.push(TraceStep { t, loss, grad_norm });
    }
    let x_cf = codec.decode(&z)?;
    let pred_cf = target.predict(&x_cf.to_tensor())?;
    Ok(CounterfactualResult {
        x_f: x_f.clone(),
        x_cf,
        x_mask_cf: None,
        x_den: None,
        delta: None,
        mask: None,
        mask_density: None,
        refine: None,
        pred_f,
        y_target: *y_target,
        pred_cf,
        pred_mask_cf: None,
        trace,
        config: cfg.clone(),
        z_big_t: Some(z_big_t),
    })
}
