//! Latent codec: encoder `E` (video -> latent) and decoder `D` (latent ->
//! video), plus the exact vector-Jacobian product through `D` that guidance
//! differentiates through.
//!
//! [`ConvCodec`] is a per-frame convolutional autoencoder with 4x spatial
//! downsampling; [`IdentityCodec`] is a reshape-only fixture.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::TensorArchive;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    params_from_archive, params_to_archive, sigmoid, sigmoid_backward, tanh_backward, tanh_inplace,
    upsample2, upsample2_backward, Conv, Parameterized,
};
use crate::rng::SeedSpec;
use crate::tensor::{Dims4, LatentTensor, Tensor, VideoTensor};
use crate::train::{fit, Diverged, LossCurve, TrainConfig};

pub trait Codec: Send + Sync {
    fn latent_dims(&self, video: Dims4) -> Result<Dims4>;

    fn encode(&self, video: &VideoTensor) -> Result<LatentTensor>;

    /// Decoder output before any range enforcement, shaped like a video.
    fn decode_tensor(&self, latent: &LatentTensor) -> Result<Tensor>;

    /// Exact VJP of [`Codec::decode_tensor`] at `latent`.
    fn decode_pullback(&self, latent: &LatentTensor, cotangent: &Tensor) -> Result<LatentTensor>;

    /// Identity of the codec weights, used for compatibility checks.
    fn content_hash(&self) -> String;

    /// Decoded video, clamped to `[0, 1]`.
    fn decode(&self, latent: &LatentTensor) -> Result<VideoTensor> {
        let t = self.decode_tensor(latent)?;
        let dims = t.dims4()?;
        let data = t
            .into_data()
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        VideoTensor::new(dims, data)
    }
}

/// Encoder is a reshape of the video into latent layout (`c_lat = C`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn latent_dims(&self, video: Dims4) -> Result<Dims4> {
        video.validate()?;
        Ok(video)
    }

    fn encode(&self, video: &VideoTensor) -> Result<LatentTensor> {
        LatentTensor::new(video.dims(), video.data().to_vec())
    }

    fn decode_tensor(&self, latent: &LatentTensor) -> Result<Tensor> {
        Ok(latent.to_tensor())
    }

    fn decode_pullback(&self, latent: &LatentTensor, cotangent: &Tensor) -> Result<LatentTensor> {
        check_cotangent(latent.dims(), cotangent)?;
        LatentTensor::new(latent.dims(), cotangent.data().to_vec())
    }

    fn content_hash(&self) -> String {
        "identity".into()
    }
}

fn check_cotangent(expected: Dims4, cotangent: &Tensor) -> Result<()> {
    if cotangent.shape() != expected.to_shape().as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "cotangent shape {:?}, decoder output {expected}",
            cotangent.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecArch {
    pub channels: usize,
    pub hidden: usize,
    pub latent_channels: usize,
}

impl Default for CodecArch {
    fn default() -> Self {
        Self {
            channels: 3,
            hidden: 16,
            latent_channels: 4,
        }
    }
}

/// Per-frame conv autoencoder.
///
/// Encoder: `conv3x3/2 -> tanh -> conv3x3/2`, then multiplied by
/// `latent_scale`. Decoder: divide by `latent_scale`, `up2 -> conv3x3 ->
/// tanh -> up2 -> conv3x3 -> sigmoid`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCodec {
    pub arch: CodecArch,
    pub enc1: Conv,
    pub enc2: Conv,
    pub dec1: Conv,
    pub dec2: Conv,
    /// Scales raw encoder output to roughly unit variance.
    pub latent_scale: f32,
}

impl Parameterized for ConvCodec {
    fn named(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut v = Vec::new();
        self.enc1.named_into("enc1", &mut v);
        self.enc2.named_into("enc2", &mut v);
        self.dec1.named_into("dec1", &mut v);
        self.dec2.named_into("dec2", &mut v);
        v
    }

    fn slots_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v = Vec::new();
        self.enc1.slots_into(&mut v);
        self.enc2.slots_into(&mut v);
        self.dec1.slots_into(&mut v);
        self.dec2.slots_into(&mut v);
        v
    }
}

struct DecodeCache {
    z: Vec<f32>,
    zd: Dims4,
    up1d: Dims4,
    a1: Vec<f32>,
    a1d: Dims4,
    up2: Vec<f32>,
    up2d: Dims4,
    out: Vec<f32>,
}

struct EncodeCache {
    h1: Vec<f32>,
    h1d: Dims4,
}

impl ConvCodec {
    pub fn new(arch: CodecArch, seed: &SeedSpec) -> Self {
        let (c, h, l) = (arch.channels, arch.hidden, arch.latent_channels);
        Self {
            arch,
            enc1: Conv::new(1, 3, 2, c, h, &seed.derive("enc1")),
            enc2: Conv::new(1, 3, 2, h, l, &seed.derive("enc2")),
            dec1: Conv::new(1, 3, 1, l, h, &seed.derive("dec1")),
            dec2: Conv::new(1, 3, 1, h, c, &seed.derive("dec2")),
            latent_scale: 1.0,
        }
    }

    fn check_video_dims(&self, d: Dims4) -> Result<()> {
        if d.channels != self.arch.channels || d.height % 4 != 0 || d.width % 4 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "codec expects {} channels and H, W divisible by 4; got {d}",
                self.arch.channels
            )));
        }
        Ok(())
    }

    fn check_latent_dims(&self, d: Dims4) -> Result<()> {
        if d.channels != self.arch.latent_channels {
            return Err(Error::ShapeMismatch(format!(
                "codec expects {} latent channels, got {d}",
                self.arch.latent_channels
            )));
        }
        Ok(())
    }

    /// Raw (unscaled) encoder output.
    fn encode_raw(&self, x: &[f32], d: Dims4) -> Result<(Vec<f32>, Dims4, EncodeCache)> {
        let (mut h1, h1d) = self.enc1.forward(x, d)?;
        tanh_inplace(&mut h1);
        let (z, zd) = self.enc2.forward(&h1, h1d)?;
        Ok((z, zd, EncodeCache { h1, h1d }))
    }

    /// Decoder on raw (unscaled) latents.
    fn decode_raw(&self, z: &[f32], zd: Dims4) -> Result<DecodeCache> {
        let (up1, up1d) = upsample2(z, zd);
        let (mut a1, a1d) = self.dec1.forward(&up1, up1d)?;
        tanh_inplace(&mut a1);
        let (up2, up2d) = upsample2(&a1, a1d);
        let (mut out, _) = self.dec2.forward(&up2, up2d)?;
        for v in out.iter_mut() {
            *v = sigmoid(*v);
        }
        Ok(DecodeCache {
            z: z.to_vec(),
            zd,
            up1d,
            a1,
            a1d,
            up2,
            up2d,
            out,
        })
    }

    /// Returns the cotangent w.r.t. the raw latent; accumulates decoder
    /// parameter gradients when `grad` is given.
    fn decode_backward(
        &self,
        cache: &DecodeCache,
        dout: &[f32],
        grad: Option<&mut ConvCodec>,
    ) -> Vec<f32> {
        let dpre2 = sigmoid_backward(&cache.out, dout);
        let dup2 = self.dec2.backward_input(&dpre2, cache.up2d);
        let da1 = upsample2_backward(&dup2, cache.a1d);
        let dpre1 = tanh_backward(&cache.a1, &da1);
        let dup1 = self.dec1.backward_input(&dpre1, cache.up1d);
        if let Some(g) = grad {
            self.dec2
                .backward_params(&cache.up2, cache.up2d, &dpre2, &mut g.dec2);
            let (up1, _) = upsample2(&cache.z, cache.zd);
            self.dec1
                .backward_params(&up1, cache.up1d, &dpre1, &mut g.dec1);
        }
        upsample2_backward(&dup1, cache.zd)
    }

    fn scaled_latent(&self, z: &LatentTensor) -> Vec<f32> {
        z.data().iter().map(|v| v / self.latent_scale).collect()
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = params_to_archive(self)?;
        a.insert_f32("latent_scale", vec![1], vec![self.latent_scale])?;
        Ok(a)
    }

    pub fn from_archive(arch: CodecArch, a: &TensorArchive) -> Result<Self> {
        let mut c = ConvCodec::new(arch, &SeedSpec::new(0, "load"));
        params_from_archive(&mut c, a)?;
        let s = a.tensor("latent_scale")?;
        c.latent_scale = s.data()[0];
        Ok(c)
    }
}

impl Codec for ConvCodec {
    fn latent_dims(&self, video: Dims4) -> Result<Dims4> {
        video.validate()?;
        self.check_video_dims(video)?;
        Ok(Dims4::new(
            video.frames,
            video.height / 4,
            video.width / 4,
            self.arch.latent_channels,
        ))
    }

    fn encode(&self, video: &VideoTensor) -> Result<LatentTensor> {
        self.check_video_dims(video.dims())?;
        let (z, zd, _) = self.encode_raw(video.data(), video.dims())?;
        LatentTensor::new(zd, z.into_iter().map(|v| v * self.latent_scale).collect())
    }

    fn decode_tensor(&self, latent: &LatentTensor) -> Result<Tensor> {
        self.check_latent_dims(latent.dims())?;
        let cache = self.decode_raw(&self.scaled_latent(latent), latent.dims())?;
        let d = latent.dims();
        Tensor::new(
            vec![d.frames, d.height * 4, d.width * 4, self.arch.channels],
            cache.out,
        )
    }

    fn decode_pullback(&self, latent: &LatentTensor, cotangent: &Tensor) -> Result<LatentTensor> {
        self.check_latent_dims(latent.dims())?;
        let d = latent.dims();
        check_cotangent(
            Dims4::new(d.frames, d.height * 4, d.width * 4, self.arch.channels),
            cotangent,
        )?;
        let cache = self.decode_raw(&self.scaled_latent(latent), d)?;
        let dz = self.decode_backward(&cache, cotangent.data(), None);
        LatentTensor::new(d, dz.into_iter().map(|v| v / self.latent_scale).collect())
    }

    fn content_hash(&self) -> String {
        self.to_archive()
            .map(|a| a.content_hash())
            .unwrap_or_else(|_| "invalid".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecTrainConfig {
    pub arch: CodecArch,
    pub train: TrainConfig,
    /// Frames used to estimate the latent scale after training.
    pub scale_frames: usize,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            arch: CodecArch::default(),
            train: TrainConfig {
                steps: 1500,
                batch_size: 16,
                lr: 3e-3,
                seed: SeedSpec::new(0, "codec-train"),
                ..TrainConfig::default()
            },
            scale_frames: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    pub val_psnr: f32,
    pub final_train_mse: f32,
    pub curve: LossCurve,
}

/// Mean-squared error of `a` vs `b` in f64.
pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio for unit peak.
pub fn psnr(a: &[f32], b: &[f32]) -> f64 {
    let m = mse(a, b).max(1e-12);
    10.0 * (1.0 / m).log10()
}

/// Mean per-video reconstruction PSNR.
pub fn reconstruction_psnr(codec: &dyn Codec, videos: &[VideoTensor]) -> Result<f32> {
    if videos.is_empty() {
        return Err(Error::EmptyInput("no videos to evaluate".into()));
    }
    let mut total = 0.0;
    for v in videos {
        let r = codec.decode(&codec.encode(v)?)?;
        total += psnr(r.data(), v.data());
    }
    Ok((total / videos.len() as f64) as f32)
}

/// Fits the autoencoder on single frames drawn from `train`, then sets the
/// latent scale so encoded training frames have unit standard deviation.
pub fn train_codec(
    train: &Dataset,
    val: &Dataset,
    cfg: &CodecTrainConfig,
) -> std::result::Result<(ConvCodec, CodecReport), Diverged<ConvCodec>> {
    let dims = match train.dims() {
        Some(d) => d,
        None => {
            return Err(Diverged {
                iteration: 0,
                reason: "empty training split".into(),
                last_finite: Box::new(ConvCodec::new(cfg.arch, &cfg.train.seed.derive("init"))),
            })
        }
    };
    let init = ConvCodec::new(cfg.arch, &cfg.train.seed.derive("init"));
    let frame_len = dims.frame_len();
    let bs = cfg.train.batch_size.max(1);
    let (mut codec, curve) = fit(init, &cfg.train, |p, rng, g| {
        let mut x = Vec::with_capacity(bs * frame_len);
        for _ in 0..bs {
            let v = &train.videos[rng.gen_range(0..train.len())];
            let f = rng.gen_range(0..dims.frames);
            x.extend_from_slice(v.frame(f));
        }
        let d = Dims4::new(bs, dims.height, dims.width, dims.channels);
        let Ok((z, zd, ec)) = p.encode_raw(&x, d) else {
            return f32::NAN;
        };
        let Ok(dc) = p.decode_raw(&z, zd) else {
            return f32::NAN;
        };
        let n = x.len() as f32;
        let mut loss = 0.0f64;
        let dout: Vec<f32> = dc
            .out
            .iter()
            .zip(&x)
            .map(|(&y, &t)| {
                let e = y - t;
                loss += (e as f64) * (e as f64);
                2.0 * e / n
            })
            .collect();
        let dz = p.decode_backward(&dc, &dout, Some(g));
        p.enc2.backward_params(&ec.h1, ec.h1d, &dz, &mut g.enc2);
        let dh1 = p.enc2.backward_input(&dz, ec.h1d);
        let dpre1 = tanh_backward(&ec.h1, &dh1);
        p.enc1.backward_params(&x, d, &dpre1, &mut g.enc1);
        (loss / n as f64) as f32
    })?;

    // latent scale from a deterministic subset of training frames
    let mut sum = 0.0f64;
    let mut sq = 0.0f64;
    let mut count = 0usize;
    let total = train.len() * dims.frames;
    let stride = (total / cfg.scale_frames.max(1)).max(1);
    for k in (0..total).step_by(stride) {
        let v = &train.videos[k / dims.frames];
        let fd = Dims4::new(1, dims.height, dims.width, dims.channels);
        if let Ok((z, _, _)) = codec.encode_raw(v.frame(k % dims.frames), fd) {
            for x in z {
                sum += x as f64;
                sq += (x as f64) * (x as f64);
                count += 1;
            }
        }
    }
    if count > 1 {
        let mean = sum / count as f64;
        let var = (sq / count as f64 - mean * mean).max(1e-12);
        codec.latent_scale = (1.0 / var.sqrt()) as f32;
    }

    let val_videos = if val.is_empty() {
        &train.videos
    } else {
        &val.videos
    };
    let val_psnr = reconstruction_psnr(&codec, val_videos).unwrap_or(f32::NAN);
    let final_train_mse = curve.tail_mean(50);
    Ok((
        codec,
        CodecReport {
            val_psnr,
            final_train_mse,
            curve,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_split, DatasetConfig};
    use crate::rng::gaussian_sample;

    fn random_latent(seed: u64, d: Dims4) -> LatentTensor {
        LatentTensor::from_tensor(
            gaussian_sample(&SeedSpec::new(seed, "latent"), &d.to_shape())
                .map(|t| Tensor::new(t.shape().to_vec(), t.into_data()).unwrap())
                .unwrap(),
        )
        .unwrap()
    }

    fn small_codec(channels: usize) -> ConvCodec {
        let mut c = ConvCodec::new(
            CodecArch {
                channels,
                hidden: 3,
                latent_channels: 2,
            },
            &SeedSpec::new(5, "codec"),
        );
        c.latent_scale = 1.7;
        c
    }

    #[test]
    fn identity_round_trip_is_exact() {
        let cfg = DatasetConfig::classification(1, 0, 0);
        let ds = make_split(&cfg, "train").unwrap();
        let x = &ds.videos[0];
        let z = IdentityCodec.encode(x).unwrap();
        assert_eq!(z.data(), x.data());
        assert_eq!(&IdentityCodec.decode(&z).unwrap(), x);
    }

    #[test]
    fn identity_pullback_is_reshape() {
        let d = Dims4::new(2, 4, 4, 2);
        let z = random_latent(1, d);
        let cot = gaussian_sample(&SeedSpec::new(2, "cot"), &d.to_shape()).unwrap();
        let g = IdentityCodec.decode_pullback(&z, &cot).unwrap();
        assert_eq!(g.data(), cot.data());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let c = small_codec(3);
        let bad = VideoTensor::zeros(Dims4::new(2, 6, 8, 3)).unwrap();
        assert!(matches!(c.encode(&bad), Err(Error::ShapeMismatch(_))));
        let bad_latent = LatentTensor::zeros(Dims4::new(2, 2, 2, 3)).unwrap();
        assert!(matches!(
            c.decode(&bad_latent),
            Err(Error::ShapeMismatch(_))
        ));
        let z = LatentTensor::zeros(Dims4::new(2, 2, 2, 2)).unwrap();
        let cot = Tensor::zeros(vec![2, 8, 8, 1]);
        assert!(matches!(
            c.decode_pullback(&z, &cot),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn decode_output_in_unit_range_and_encode_finite() {
        let c = small_codec(3);
        let z = random_latent(3, Dims4::new(2, 4, 4, 2));
        let z = LatentTensor::new(z.dims(), z.data().iter().map(|v| v * 50.0).collect()).unwrap();
        let x = c.decode(&z).unwrap();
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let zero = VideoTensor::zeros(Dims4::new(2, 16, 16, 3)).unwrap();
        let e1 = c.encode(&zero).unwrap();
        let e2 = c.encode(&zero).unwrap();
        assert!(e1.data().iter().all(|v| v.is_finite()));
        assert_eq!(e1, e2);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let c = small_codec(1);
        let z = random_latent(4, Dims4::new(2, 4, 4, 2));
        let cot = Tensor::zeros(vec![2, 16, 16, 1]);
        let g = c.decode_pullback(&z, &cot).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    /// Central differences of `<cot, D(z)>` per latent element, step 1e-3.
    fn fd_pullback(c: &ConvCodec, z: &LatentTensor, cot: &Tensor) -> Vec<f64> {
        let h = 1e-3f32;
        let obj = |zz: &LatentTensor| -> f64 {
            let y = c.decode_tensor(zz).unwrap();
            y.data()
                .iter()
                .zip(cot.data())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };
        (0..z.data().len())
            .map(|i| {
                let mut p = z.data().to_vec();
                p[i] += h;
                let mut m = z.data().to_vec();
                m[i] -= h;
                let fp = obj(&LatentTensor::new(z.dims(), p).unwrap());
                let fm = obj(&LatentTensor::new(z.dims(), m).unwrap());
                (fp - fm) / (2.0 * h as f64)
            })
            .collect()
    }

    #[test]
    fn pullback_matches_finite_differences() {
        for seed in 0..4u64 {
            let c = ConvCodec::new(
                CodecArch {
                    channels: 3,
                    hidden: 4,
                    latent_channels: 2,
                },
                &SeedSpec::new(seed, "fd-codec"),
            );
            let z = random_latent(10 + seed, Dims4::new(2, 4, 4, 2));
            let cot = gaussian_sample(&SeedSpec::new(seed, "cot"), &[2, 16, 16, 3]).unwrap();
            let an = c.decode_pullback(&z, &cot).unwrap();
            let fd = fd_pullback(&c, &z, &cot);
            let num: f64 = an
                .data()
                .iter()
                .zip(&fd)
                .map(|(a, b)| (*a as f64 - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(
                num / den <= 1e-3,
                "seed {seed}: relative error {}",
                num / den
            );
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params_and_loss() {
        let cfg = DatasetConfig::classification(2, 1, 0);
        let train = make_split(&cfg, "train").unwrap();
        let val = make_split(&cfg, "val").unwrap();
        let mut tc = CodecTrainConfig::default();
        tc.train.steps = 3;
        tc.train.lr = 0.0;
        tc.train.batch_size = 2;
        let (c, rep) = train_codec(&train, &val, &tc).unwrap();
        let init = ConvCodec::new(tc.arch, &tc.train.seed.derive("init"));
        assert_eq!(c.named(), init.named());
        assert!(rep.curve.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn fixed_seed_training_is_reproducible() {
        let cfg = DatasetConfig::regression(3, 1, 0);
        let train = make_split(&cfg, "train").unwrap();
        let val = make_split(&cfg, "val").unwrap();
        let mut tc = CodecTrainConfig::default();
        tc.arch.channels = 1;
        tc.train.steps = 5;
        tc.train.batch_size = 2;
        let (a, _) = train_codec(&train, &val, &tc).unwrap();
        let (b, _) = train_codec(&train, &val, &tc).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a, b);
    }

    #[test]
    fn archive_round_trip_preserves_codec() {
        let c = small_codec(3);
        let a = c.to_archive().unwrap();
        let back = ConvCodec::from_archive(c.arch, &a).unwrap();
        assert_eq!(back, c);
    }
}
