//! Conditional noise-prediction network and its training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::TensorArchive;
use crate::codec::Codec;
use crate::data::{Dataset, Label, Task};
use crate::diffusion::{q_sample, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{
    params_from_archive, params_to_archive, tanh_backward, tanh_inplace, Conv, Dense, Parameterized,
};
use crate::rng::{fill_normal, SeedSpec};
use crate::tensor::{Dims4, LatentTensor};
use crate::train::{fit, Diverged, LossCurve, TrainConfig};

/// How the condition enters the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConditionSpec {
    /// Learned table row per class.
    Class { classes: usize },
    /// Learned affine map of `(y - center) / scale`.
    Scalar { center: f32, scale: f32 },
}

impl ConditionSpec {
    pub fn task(&self) -> Task {
        match self {
            ConditionSpec::Class { .. } => Task::Classification,
            ConditionSpec::Scalar { .. } => Task::Regression,
        }
    }

    pub fn check(&self, cond: &Label) -> Result<()> {
        match (self, cond) {
            (ConditionSpec::Class { classes }, Label::Class(c)) if c < classes => Ok(()),
            (ConditionSpec::Class { classes }, Label::Class(c)) => {
                Err(Error::Condition(format!("class {c} outside 0..{classes}")))
            }
            (ConditionSpec::Scalar { .. }, Label::Value(v)) if v.is_finite() => Ok(()),
            (ConditionSpec::Scalar { .. }, Label::Value(v)) => {
                Err(Error::Condition(format!("non-finite scalar condition {v}")))
            }
            (spec, other) => Err(Error::Condition(format!(
                "{} condition given to a {} denoiser",
                other.task(),
                spec.task()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub latent_channels: usize,
    pub hidden: usize,
    pub time_freqs: usize,
    pub max_frames: usize,
    pub condition: ConditionSpec,
}

impl DenoiserArch {
    pub fn new(latent_channels: usize, condition: ConditionSpec) -> Self {
        Self {
            latent_channels,
            hidden: 32,
            time_freqs: 8,
            max_frames: 16,
            condition,
        }
    }
}

/// Per-frame conv trunk with additive embeddings:
///
/// ```text
/// e_f  = mlp(sin/cos(t)) + cond(y) + frame_table[f]
/// h1   = tanh(conv_in(z) + e_f)
/// h2   = h1 + tanh(conv_mid(h1) + e_f)
/// eps  = conv_out(h2)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub arch: DenoiserArch,
    conv_in: Conv,
    conv_mid: Conv,
    conv_out: Conv,
    time1: Dense,
    time2: Dense,
    /// `[classes][hidden]`, or `[2][hidden]` holding weight and bias rows for a scalar condition.
    cond_table: Vec<f32>,
    frame_table: Vec<f32>,
    /// Hash of the codec whose latents this denoiser was trained on.
    pub codec_hash: String,
    pub schedule: NoiseSchedule,
}

impl Parameterized for Denoiser {
    fn named(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut v = Vec::new();
        self.conv_in.named_into("conv_in", &mut v);
        self.conv_mid.named_into("conv_mid", &mut v);
        self.conv_out.named_into("conv_out", &mut v);
        self.time1.named_into("time1", &mut v);
        self.time2.named_into("time2", &mut v);
        let h = self.arch.hidden;
        v.push((
            "cond".into(),
            vec![self.cond_table.len() / h, h],
            &self.cond_table[..],
        ));
        v.push((
            "frame".into(),
            vec![self.arch.max_frames, h],
            &self.frame_table[..],
        ));
        v
    }

    fn slots_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v = Vec::new();
        self.conv_in.slots_into(&mut v);
        self.conv_mid.slots_into(&mut v);
        self.conv_out.slots_into(&mut v);
        self.time1.slots_into(&mut v);
        self.time2.slots_into(&mut v);
        v.push(&mut self.cond_table[..]);
        v.push(&mut self.frame_table[..]);
        v
    }
}

/// Conditioning for one frame of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCondition {
    pub t: usize,
    pub cond: Label,
    pub frame: usize,
}

struct Cache {
    tfeat: Vec<Vec<f32>>,
    t1: Vec<Vec<f32>>,
    h1: Vec<f32>,
    a2: Vec<f32>,
    h2: Vec<f32>,
}

fn time_features(t: usize, freqs: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(2 * freqs);
    for k in 0..freqs {
        let w = (1000f64).powf(-(k as f64) / freqs as f64);
        let a = t as f64 * w;
        out.push(a.sin() as f32);
        out.push(a.cos() as f32);
    }
    out
}

fn add_rows(x: &mut [f32], d: Dims4, rows: &[Vec<f32>]) {
    for (f, row) in rows.iter().enumerate() {
        let frame = &mut x
            [f * d.pixels_per_frame() * d.channels..(f + 1) * d.pixels_per_frame() * d.channels];
        for px in frame.chunks_exact_mut(d.channels) {
            for (v, e) in px.iter_mut().zip(row) {
                *v += e;
            }
        }
    }
}

fn sum_rows(g: &[f32], d: Dims4, out: &mut [Vec<f32>]) {
    for (f, row) in out.iter_mut().enumerate() {
        let frame =
            &g[f * d.pixels_per_frame() * d.channels..(f + 1) * d.pixels_per_frame() * d.channels];
        for px in frame.chunks_exact(d.channels) {
            for (r, v) in row.iter_mut().zip(px) {
                *r += v;
            }
        }
    }
}

impl Denoiser {
    pub fn new(
        arch: DenoiserArch,
        schedule: NoiseSchedule,
        codec_hash: String,
        seed: &SeedSpec,
    ) -> Self {
        let (c, h) = (arch.latent_channels, arch.hidden);
        let cond_rows = match arch.condition {
            ConditionSpec::Class { classes } => classes,
            ConditionSpec::Scalar { .. } => 2,
        };
        let mut cond_table = vec![0.0; cond_rows * h];
        let mut frame_table = vec![0.0; arch.max_frames * h];
        fill_normal(&mut seed.derive("cond").rng(), &mut cond_table, 0.3);
        fill_normal(&mut seed.derive("frame").rng(), &mut frame_table, 0.1);
        let mut conv_out = Conv::new(1, 3, 1, h, c, &seed.derive("conv_out"));
        conv_out.weight.iter_mut().for_each(|w| *w *= 0.5);
        Self {
            conv_in: Conv::new(1, 3, 1, c, h, &seed.derive("conv_in")),
            conv_mid: Conv::new(1, 3, 1, h, h, &seed.derive("conv_mid")),
            conv_out,
            time1: Dense::new(2 * arch.time_freqs, h, &seed.derive("time1")),
            time2: Dense::new(h, h, &seed.derive("time2")),
            cond_table,
            frame_table,
            arch,
            codec_hash,
            schedule,
        }
    }

    fn cond_row(&self, cond: &Label) -> Vec<f32> {
        let h = self.arch.hidden;
        match (&self.arch.condition, cond) {
            (ConditionSpec::Class { .. }, Label::Class(c)) => {
                self.cond_table[c * h..(c + 1) * h].to_vec()
            }
            (ConditionSpec::Scalar { center, scale }, Label::Value(v)) => {
                let u = (v - center) / scale;
                (0..h)
                    .map(|i| self.cond_table[i] * u + self.cond_table[h + i])
                    .collect()
            }
            _ => unreachable!("conditions are checked before the forward pass"),
        }
    }

    fn check_frames(&self, d: Dims4, frames: &[FrameCondition]) -> Result<()> {
        if d.channels != self.arch.latent_channels {
            return Err(Error::ShapeMismatch(format!(
                "denoiser expects {} latent channels, got {d}",
                self.arch.latent_channels
            )));
        }
        if d.frames != frames.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} frame conditions for {} frames",
                frames.len(),
                d.frames
            )));
        }
        for fc in frames {
            self.arch.condition.check(&fc.cond)?;
            if fc.frame >= self.arch.max_frames {
                return Err(Error::ShapeMismatch(format!(
                    "frame index {} beyond the {} learned frame positions",
                    fc.frame, self.arch.max_frames
                )));
            }
            if fc.t == 0 || fc.t > self.schedule.t_train() {
                return Err(Error::Config(format!(
                    "timestep {} outside 1..={}",
                    fc.t,
                    self.schedule.t_train()
                )));
            }
        }
        Ok(())
    }

    fn forward(
        &self,
        z: &[f32],
        d: Dims4,
        frames: &[FrameCondition],
    ) -> Result<(Vec<f32>, Vec<Vec<f32>>, Cache)> {
        self.check_frames(d, frames)?;
        let h = self.arch.hidden;
        let mut tfeat = Vec::with_capacity(frames.len());
        let mut t1s = Vec::with_capacity(frames.len());
        let mut emb = Vec::with_capacity(frames.len());
        for fc in frames {
            let tf = time_features(fc.t, self.arch.time_freqs);
            let mut t1 = self.time1.forward(&tf);
            tanh_inplace(&mut t1);
            let mut e = self.time2.forward(&t1);
            let c = self.cond_row(&fc.cond);
            let fr = &self.frame_table[fc.frame * h..(fc.frame + 1) * h];
            for i in 0..h {
                e[i] += c[i] + fr[i];
            }
            tfeat.push(tf);
            t1s.push(t1);
            emb.push(e);
        }
        let (mut h1, hd) = self.conv_in.forward(z, d)?;
        add_rows(&mut h1, hd, &emb);
        tanh_inplace(&mut h1);
        let (mut a2, _) = self.conv_mid.forward(&h1, hd)?;
        add_rows(&mut a2, hd, &emb);
        tanh_inplace(&mut a2);
        let h2: Vec<f32> = h1.iter().zip(&a2).map(|(a, b)| a + b).collect();
        let (out, _) = self.conv_out.forward(&h2, hd)?;
        Ok((
            out,
            emb,
            Cache {
                tfeat,
                t1: t1s,
                h1,
                a2,
                h2,
            },
        ))
    }

    fn backward(
        &self,
        z: &[f32],
        d: Dims4,
        frames: &[FrameCondition],
        cache: &Cache,
        dout: &[f32],
        g: &mut Denoiser,
    ) {
        let h = self.arch.hidden;
        let hd = Dims4::new(d.frames, d.height, d.width, h);
        self.conv_out
            .backward_params(&cache.h2, hd, dout, &mut g.conv_out);
        let dh2 = self.conv_out.backward_input(dout, hd);
        let dp2 = tanh_backward(&cache.a2, &dh2);
        let mut demb = vec![vec![0.0f32; h]; d.frames];
        sum_rows(&dp2, hd, &mut demb);
        self.conv_mid
            .backward_params(&cache.h1, hd, &dp2, &mut g.conv_mid);
        let mut dh1 = self.conv_mid.backward_input(&dp2, hd);
        for (a, b) in dh1.iter_mut().zip(&dh2) {
            *a += b;
        }
        let dp1 = tanh_backward(&cache.h1, &dh1);
        sum_rows(&dp1, hd, &mut demb);
        self.conv_in.backward_params(z, d, &dp1, &mut g.conv_in);
        for (f, fc) in frames.iter().enumerate() {
            let de = &demb[f];
            self.time2.backward_params(&cache.t1[f], de, &mut g.time2);
            let dt1 = tanh_backward(&cache.t1[f], &self.time2.backward_input(de));
            self.time1
                .backward_params(&cache.tfeat[f], &dt1, &mut g.time1);
            match (&self.arch.condition, fc.cond) {
                (ConditionSpec::Class { .. }, Label::Class(c)) => {
                    for (a, b) in g.cond_table[c * h..(c + 1) * h].iter_mut().zip(de) {
                        *a += b;
                    }
                }
                (ConditionSpec::Scalar { center, scale }, Label::Value(v)) => {
                    let u = (v - center) / scale;
                    for i in 0..h {
                        g.cond_table[i] += de[i] * u;
                        g.cond_table[h + i] += de[i];
                    }
                }
                _ => unreachable!(),
            }
            for (a, b) in g.frame_table[fc.frame * h..(fc.frame + 1) * h]
                .iter_mut()
                .zip(de)
            {
                *a += b;
            }
        }
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        params_to_archive(self)
    }

    pub fn from_archive(
        arch: DenoiserArch,
        schedule: NoiseSchedule,
        codec_hash: String,
        a: &TensorArchive,
    ) -> Result<Self> {
        let mut d = Denoiser::new(arch, schedule, codec_hash, &SeedSpec::new(0, "load"));
        params_from_archive(&mut d, a)?;
        Ok(d)
    }

    /// Mean-squared noise-prediction error on the given frames.
    fn batch_loss(
        &self,
        z0: &[f32],
        eps: &[f32],
        d: Dims4,
        frames: &[FrameCondition],
        grad: Option<&mut Denoiser>,
    ) -> Result<f32> {
        let mut zt = Vec::with_capacity(z0.len());
        let fl = d.frame_len();
        for (f, fc) in frames.iter().enumerate() {
            let a = self.schedule.alpha_bar(fc.t)?;
            let (s0, s1) = (a.sqrt(), (1.0 - a).sqrt());
            for i in f * fl..(f + 1) * fl {
                zt.push((s0 * z0[i] as f64 + s1 * eps[i] as f64) as f32);
            }
        }
        let (out, _, cache) = self.forward(&zt, d, frames)?;
        let n = out.len() as f32;
        let mut loss = 0.0f64;
        let dout: Vec<f32> = out
            .iter()
            .zip(eps)
            .map(|(&p, &e)| {
                let r = p - e;
                loss += (r as f64) * (r as f64);
                2.0 * r / n
            })
            .collect();
        if let Some(g) = grad {
            self.backward(&zt, d, frames, &cache, &dout, g);
        }
        Ok((loss / n as f64) as f32)
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, z_t: &LatentTensor, cond: &Label, t: usize) -> Result<LatentTensor> {
        let d = z_t.dims();
        let frames: Vec<FrameCondition> = (0..d.frames)
            .map(|f| FrameCondition {
                t,
                cond: *cond,
                frame: f,
            })
            .collect();
        let (out, _, _) = self.forward(z_t.data(), d, &frames)?;
        LatentTensor::new(d, out).map_err(|_| Error::Numeric {
            step: t,
            what: "noise prediction".into(),
        })
    }

    fn codec_hash(&self) -> Option<String> {
        Some(self.codec_hash.clone())
    }

    fn schedule_hash(&self) -> String {
        self.schedule.content_hash()
    }

    fn content_hash(&self) -> String {
        self.to_archive()
            .map(|a| a.content_hash())
            .unwrap_or_else(|_| "invalid".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            train: TrainConfig {
                steps: 3000,
                batch_size: 32,
                lr: 2e-3,
                seed: SeedSpec::new(0, "denoiser-train"),
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserReport {
    pub final_train_loss: f32,
    pub curve: LossCurve,
}

/// Condition embedding suited to a dataset's labels.
pub fn condition_spec_for(ds: &Dataset, classes: usize, value_range: (f32, f32)) -> ConditionSpec {
    match ds.task {
        Task::Classification => ConditionSpec::Class { classes },
        Task::Regression => ConditionSpec::Scalar {
            center: 0.5 * (value_range.0 + value_range.1),
            scale: 0.5 * (value_range.1 - value_range.0).max(1e-6),
        },
    }
}

/// Fits the noise predictor on single latent frames of the encoded training
/// split with uniformly drawn timesteps.
pub fn train_denoiser(
    train: &Dataset,
    codec: &dyn Codec,
    schedule: &NoiseSchedule,
    condition: ConditionSpec,
    cfg: &DenoiserTrainConfig,
) -> std::result::Result<(Denoiser, DenoiserReport), Diverged<Denoiser>> {
    let latent_dims = train.dims().and_then(|d| codec.latent_dims(d).ok());
    let mut arch = DenoiserArch::new(latent_dims.map_or(1, |d| d.channels), condition);
    arch.hidden = cfg.hidden;
    if let Some(ld) = latent_dims {
        arch.max_frames = ld.frames;
    }
    let init = Denoiser::new(
        arch,
        schedule.clone(),
        codec.content_hash(),
        &cfg.train.seed.derive("init"),
    );
    let fail = |reason: String, d: &Denoiser| Diverged {
        iteration: 0,
        reason,
        last_finite: Box::new(d.clone()),
    };
    let Some(ld) = latent_dims else {
        return Err(fail(
            "empty training split or incompatible codec".into(),
            &init,
        ));
    };
    let mut latents = Vec::with_capacity(train.len());
    for v in &train.videos {
        match codec.encode(v) {
            Ok(z) => latents.push(z),
            Err(e) => return Err(fail(format!("encoding failed: {e}"), &init)),
        }
    }
    if let Some(bad) = train
        .labels
        .iter()
        .find(|l| init.arch.condition.check(l).is_err())
    {
        return Err(fail(
            format!("label {bad:?} does not fit the condition embedding"),
            &init,
        ));
    }
    let bs = cfg.train.batch_size.max(1);
    let fl = ld.frame_len();
    let t_train = schedule.t_train();
    let (den, curve) = fit(init, &cfg.train, |p, rng, g| {
        let mut z0 = Vec::with_capacity(bs * fl);
        let mut frames = Vec::with_capacity(bs);
        for _ in 0..bs {
            let i = rng.gen_range(0..latents.len());
            let f = rng.gen_range(0..ld.frames);
            z0.extend_from_slice(&latents[i].data()[f * fl..(f + 1) * fl]);
            frames.push(FrameCondition {
                t: rng.gen_range(1..=t_train),
                cond: train.labels[i],
                frame: f,
            });
        }
        let mut eps = vec![0.0; z0.len()];
        fill_normal(rng, &mut eps, 1.0);
        let d = Dims4::new(bs, ld.height, ld.width, ld.channels);
        p.batch_loss(&z0, &eps, d, &frames, Some(g))
            .unwrap_or(f32::NAN)
    })?;
    let final_train_loss = curve.tail_mean(100);
    Ok((
        den,
        DenoiserReport {
            final_train_loss,
            curve,
        },
    ))
}

/// Mean noise-prediction loss on `(latent, label)` pairs, one draw of
/// `(t, eps)` per video from `seed`.
pub fn denoiser_loss(
    den: &Denoiser,
    latents: &[LatentTensor],
    labels: &[Label],
    seed: &SeedSpec,
) -> Result<f32> {
    if latents.is_empty() {
        return Err(Error::EmptyInput("no latents".into()));
    }
    let mut rng = seed.rng();
    let mut total = 0.0;
    for (z, y) in latents.iter().zip(labels) {
        let d = z.dims();
        let t = rng.gen_range(1..=den.schedule.t_train());
        let mut eps = LatentTensor::zeros(d)?.into_tensor();
        fill_normal(&mut rng, eps.data_mut(), 1.0);
        let eps = LatentTensor::from_tensor(eps)?;
        let zt = q_sample(z, t, &eps, &den.schedule)?;
        let pred = den.predict_noise(&zt, y, t)?;
        total += crate::codec::mse(pred.data(), eps.data());
    }
    Ok((total / latents.len() as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::nn::zero_grad;
    use crate::rng::gaussian_sample;

    fn small(cond: ConditionSpec) -> Denoiser {
        let mut arch = DenoiserArch::new(2, cond);
        arch.hidden = 6;
        arch.time_freqs = 3;
        arch.max_frames = 3;
        Denoiser::new(
            arch,
            make_schedule(100, 1e-4, 0.02).unwrap(),
            "codec".into(),
            &SeedSpec::new(1, "den"),
        )
    }

    fn directional_check(den: &Denoiser, frames: &[FrameCondition]) {
        let d = Dims4::new(frames.len(), 3, 3, 2);
        let z0 = gaussian_sample(&SeedSpec::new(2, "z0"), &d.to_shape())
            .unwrap()
            .into_data();
        let eps = gaussian_sample(&SeedSpec::new(3, "eps"), &d.to_shape())
            .unwrap()
            .into_data();
        let mut g = den.clone();
        zero_grad(&mut g);
        den.batch_loss(&z0, &eps, d, frames, Some(&mut g)).unwrap();
        let dir = den.clone();
        let mut dir_vals: Vec<Vec<f32>> = Vec::new();
        for (i, (_, _, v)) in dir.named().into_iter().enumerate() {
            let s = gaussian_sample(&SeedSpec::new(10 + i as u64, "dir"), &[v.len()]).unwrap();
            dir_vals.push(s.into_data());
        }
        let analytic: f64 = g
            .named()
            .iter()
            .zip(&dir_vals)
            .map(|((_, _, gv), dv)| {
                gv.iter()
                    .zip(dv)
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum::<f64>()
            })
            .sum();
        let h = 1e-3f32;
        let shifted = |sign: f32| {
            let mut p = den.clone();
            for (slot, dv) in p.slots_mut().into_iter().zip(&dir_vals) {
                for (a, b) in slot.iter_mut().zip(dv) {
                    *a += sign * h * b;
                }
            }
            p.batch_loss(&z0, &eps, d, frames, None).unwrap() as f64
        };
        let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h as f64);
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-3);
        assert!(rel < 2e-2, "analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn parameter_gradients_match_finite_differences_class() {
        let den = small(ConditionSpec::Class { classes: 3 });
        let frames = [
            FrameCondition {
                t: 5,
                cond: Label::Class(2),
                frame: 0,
            },
            FrameCondition {
                t: 60,
                cond: Label::Class(0),
                frame: 2,
            },
        ];
        directional_check(&den, &frames);
    }

    #[test]
    fn parameter_gradients_match_finite_differences_scalar() {
        let den = small(ConditionSpec::Scalar {
            center: 50.0,
            scale: 40.0,
        });
        let frames = [
            FrameCondition {
                t: 90,
                cond: Label::Value(20.0),
                frame: 1,
            },
            FrameCondition {
                t: 1,
                cond: Label::Value(77.0),
                frame: 0,
            },
        ];
        directional_check(&den, &frames);
    }

    #[test]
    fn invalid_conditions_rejected() {
        let den = small(ConditionSpec::Class { classes: 3 });
        let z = LatentTensor::zeros(Dims4::new(2, 3, 3, 2)).unwrap();
        assert!(matches!(
            den.predict_noise(&z, &Label::Class(3), 5),
            Err(Error::Condition(_))
        ));
        assert!(matches!(
            den.predict_noise(&z, &Label::Value(3.0), 5),
            Err(Error::Condition(_))
        ));
        let reg = small(ConditionSpec::Scalar {
            center: 50.0,
            scale: 40.0,
        });
        assert!(matches!(
            reg.predict_noise(&z, &Label::Value(f32::NAN), 5),
            Err(Error::Condition(_))
        ));
        assert!(den.predict_noise(&z, &Label::Class(1), 0).is_err());
    }

    #[test]
    fn archive_round_trip_preserves_predictions() {
        let den = small(ConditionSpec::Class { classes: 3 });
        let a = den.to_archive().unwrap();
        let back =
            Denoiser::from_archive(den.arch.clone(), den.schedule.clone(), "codec".into(), &a)
                .unwrap();
        let z = LatentTensor::from_tensor(
            gaussian_sample(&SeedSpec::new(4, "z"), &[2, 3, 3, 2]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            den.predict_noise(&z, &Label::Class(1), 7).unwrap(),
            back.predict_noise(&z, &Label::Class(1), 7).unwrap()
        );
        assert_eq!(den.content_hash(), back.content_hash());
    }
}
