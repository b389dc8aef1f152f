//! Models being explained: a common interface plus a small trainable video
//! network used as classifier or regressor.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::archive::TensorArchive;
use crate::data::{Dataset, Label, Task};
use crate::error::{Error, Result};
use crate::nn::{
    params_from_archive, params_to_archive, softplus_backward, softplus_inplace, tanh_backward,
    tanh_inplace, Conv, Dense, Parameterized,
};
use crate::rng::SeedSpec;
use crate::tensor::{Dims4, Tensor};
use crate::train::{fit, Diverged, LossCurve, TrainConfig};

/// A differentiable video model `f`. Inputs are plain tensors so that
/// perturbed videos outside `[0,1]` can be fed during guidance.
pub trait TargetModel: Send + Sync {
    fn task(&self) -> Task;

    /// Logits (classification) or a single value (regression).
    fn predict(&self, video: &Tensor) -> Result<Vec<f32>>;

    /// Names accepted by [`TargetModel::features`].
    fn layers(&self) -> Vec<String>;

    /// Activations of a named layer as an `(F, h, w, c)` tensor.
    /// Layers without spatial or temporal extent use size-1 axes.
    fn features(&self, video: &Tensor, layer: &str) -> Result<Tensor>;

    /// `J^T cotangent`, where `J` is the Jacobian of [`TargetModel::predict`].
    fn input_pullback(&self, video: &Tensor, cotangent: &[f32]) -> Result<Tensor>;

    /// Prediction, loss and input gradient of `loss(predict(video))`.
    /// `loss` returns the value and its gradient w.r.t. the prediction.
    fn loss_and_input_grad(
        &self,
        video: &Tensor,
        loss: &dyn Fn(&[f32]) -> Result<(f32, Vec<f32>)>,
    ) -> Result<(Vec<f32>, f32, Tensor)> {
        let pred = self.predict(video)?;
        let (l, dpred) = loss(&pred)?;
        let g = self.input_pullback(video, &dpred)?;
        Ok((pred, l, g))
    }

    fn content_hash(&self) -> String;
}

/// The label a prediction stands for: argmax class, or the value.
pub fn prediction_label(task: Task, pred: &[f32]) -> Result<Label> {
    match task {
        Task::Classification => argmax(pred).map(Label::Class),
        Task::Regression => pred
            .first()
            .copied()
            .map(Label::Value)
            .ok_or_else(|| Error::EmptyInput("empty prediction".into())),
    }
}

pub fn argmax(v: &[f32]) -> Result<usize> {
    if v.is_empty() {
        return Err(Error::EmptyInput("empty logit vector".into()));
    }
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Numerically stable softmax in f64.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let e: Vec<f64> = logits.iter().map(|&l| (l as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetArch {
    pub task: Task,
    pub channels: usize,
    /// Input frame size; the frame projection is sized for it.
    pub height: usize,
    pub width: usize,
    /// Head width: class count, or 1 for regression.
    pub outputs: usize,
    pub conv1: usize,
    pub conv2: usize,
    /// Width of the per-frame projection of the `conv2` map.
    pub frame_dim: usize,
    pub hidden: usize,
    /// Temporal kernel size of both convolutions.
    pub kt: usize,
    /// Regression output is `center + scale * raw`.
    pub center: f32,
    pub scale: f32,
}

impl TargetArch {
    pub fn classifier(dims: Dims4, classes: usize) -> Self {
        Self {
            task: Task::Classification,
            channels: dims.channels,
            height: dims.height,
            width: dims.width,
            outputs: classes,
            conv1: 8,
            conv2: 16,
            frame_dim: 32,
            hidden: 32,
            kt: 3,
            center: 0.0,
            scale: 1.0,
        }
    }

    pub fn regressor(dims: Dims4, value_range: (f32, f32)) -> Self {
        Self {
            task: Task::Regression,
            outputs: 1,
            center: 0.5 * (value_range.0 + value_range.1),
            scale: 0.5 * (value_range.1 - value_range.0).max(1e-6),
            ..Self::classifier(dims, 1)
        }
    }
}

/// `conv(kt,3x3,/2) -> softplus -> conv(kt,3x3,/2) -> softplus -> per-frame
/// dense over the flattened map -> tanh ("frame") -> temporal mean ("pooled")
/// -> dense -> tanh ("hidden") -> head`.
///
/// The per-frame projection keeps spatial layout, so motion direction is a
/// near-linear readout of temporally differenced `conv1` responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVideoNet {
    pub arch: TargetArch,
    conv1: Conv,
    conv2: Conv,
    /// Fixed per-element standardisation of the flattened `conv2` map,
    /// estimated from data at init and not trained.
    frame_mean: Vec<f32>,
    frame_inv_std: Vec<f32>,
    frame_proj: Dense,
    hidden: Dense,
    head: Dense,
}

/// Classifier instance of [`ToyVideoNet`].
pub type ToyClassifier = ToyVideoNet;
/// Regressor instance of [`ToyVideoNet`].
pub type ToyRegressor = ToyVideoNet;

/// Separable init for the first convolution: even output channels get a
/// centred linear temporal ramp (a temporal derivative), odd ones a flat
/// temporal average, each times the random spatial kernel at the centre tap.
/// Keeps the per-output fan-in variance of the default init.
fn motion_init(mut conv: Conv) -> Conv {
    let kt = conv.kt;
    let tap = conv.k * conv.k * conv.in_c * conv.out_c;
    let centre = (kt / 2) * tap;
    let spatial: Vec<f32> = conv.weight[centre..centre + tap]
        .iter()
        .map(|w| w * (kt as f32).sqrt())
        .collect();
    let ramp: Vec<f32> = (0..kt).map(|dt| dt as f32 - (kt - 1) as f32 / 2.0).collect();
    let ramp_norm = ramp.iter().map(|r| r * r).sum::<f32>().sqrt();
    let flat = 1.0 / (kt as f32).sqrt();
    for dt in 0..kt {
        for (i, &w) in spatial.iter().enumerate() {
            let o = i % conv.out_c;
            let profile = if o % 2 == 0 && ramp_norm > 0.0 {
                ramp[dt] / ramp_norm
            } else {
                flat
            };
            conv.weight[dt * tap + i] = w * profile;
        }
    }
    conv
}

/// Near-identity init: output channel `o` copies input channel `o % in_c`
/// at the spatial centre, averaged over time, on top of the default random
/// kernel scaled by `noise`. Keeps the temporal-derivative channels of the
/// first layer intact at the start of training.
fn passthrough_init(mut conv: Conv, noise: f32) -> Conv {
    conv.weight.iter_mut().for_each(|w| *w *= noise);
    let (kt, k, ic, oc) = (conv.kt, conv.k, conv.in_c, conv.out_c);
    let centre = k / 2;
    for dt in 0..kt {
        for o in 0..oc {
            let i = o % ic;
            conv.weight[(((dt * k + centre) * k + centre) * ic + i) * oc + o] += 1.0 / kt as f32;
        }
    }
    conv
}

impl Parameterized for ToyVideoNet {
    fn named(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut v = Vec::new();
        self.conv1.named_into("conv1", &mut v);
        self.conv2.named_into("conv2", &mut v);
        self.frame_proj.named_into("frame_proj", &mut v);
        self.hidden.named_into("hidden", &mut v);
        self.head.named_into("head", &mut v);
        v
    }

    fn slots_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v = Vec::new();
        self.conv1.slots_into(&mut v);
        self.conv2.slots_into(&mut v);
        self.frame_proj.slots_into(&mut v);
        self.hidden.slots_into(&mut v);
        self.head.slots_into(&mut v);
        v
    }
}

/// Convolutional part of a forward pass.
struct Trunk {
    d: Dims4,
    a1: Vec<f32>,
    a1d: Dims4,
    a2: Vec<f32>,
    a2d: Dims4,
    /// Standardised `a2`.
    a2n: Vec<f32>,
}

/// Dense part of a forward pass, from the standardised `conv2` map on.
struct Readout {
    frame: Vec<f32>,
    pooled: Vec<f32>,
    h: Vec<f32>,
    out: Vec<f32>,
}

struct Forward {
    trunk: Trunk,
    readout: Readout,
}

pub const LAYERS: [&str; 5] = ["conv1", "conv2", "frame", "pooled", "hidden"];

impl ToyVideoNet {
    pub fn new(arch: TargetArch, seed: &SeedSpec) -> Self {
        let conv1 = Conv::new(
            arch.kt,
            3,
            2,
            arch.channels,
            arch.conv1,
            &seed.derive("conv1"),
        );
        let conv1 = motion_init(conv1);
        let conv2 = Conv::new(arch.kt, 3, 2, arch.conv1, arch.conv2, &seed.derive("conv2"));
        let conv2 = passthrough_init(conv2, 0.1);
        let map =
            conv2.out_dims(conv1.out_dims(Dims4::new(1, arch.height, arch.width, arch.channels)));
        let frame_proj = Dense::new(map.frame_len(), arch.frame_dim, &seed.derive("frame_proj"));
        Self {
            frame_mean: vec![0.0; map.frame_len()],
            frame_inv_std: vec![1.0; map.frame_len()],
            frame_proj,
            conv1,
            conv2,
            hidden: Dense::new(arch.frame_dim, arch.hidden, &seed.derive("hidden")),
            head: Dense::new(arch.hidden, arch.outputs, &seed.derive("head")),
            arch,
        }
    }

    fn forward(&self, video: &Tensor) -> Result<Forward> {
        let trunk = self.trunk(video)?;
        let readout = self.readout(&trunk.a2n);
        Ok(Forward { trunk, readout })
    }

    fn trunk(&self, video: &Tensor) -> Result<Trunk> {
        let d = video.dims4()?;
        if (d.height, d.width, d.channels)
            != (self.arch.height, self.arch.width, self.arch.channels)
        {
            return Err(Error::ShapeMismatch(format!(
                "target model expects {}x{}x{} frames, got {d}",
                self.arch.height, self.arch.width, self.arch.channels
            )));
        }
        let (mut a1, a1d) = self.conv1.forward(video.data(), d)?;
        softplus_inplace(&mut a1);
        let (mut a2, a2d) = self.conv2.forward(&a1, a1d)?;
        softplus_inplace(&mut a2);
        let a2n: Vec<f32> = a2
            .chunks_exact(a2d.frame_len())
            .flat_map(|chunk| {
                chunk
                    .iter()
                    .zip(&self.frame_mean)
                    .zip(&self.frame_inv_std)
                    .map(|((x, m), s)| (x - m) * s)
            })
            .collect();
        Ok(Trunk {
            d,
            a1,
            a1d,
            a2,
            a2d,
            a2n,
        })
    }

    /// Dense layers applied to a standardised `conv2` map of whole frames.
    fn readout(&self, a2n: &[f32]) -> Readout {
        let k = self.arch.frame_dim;
        let frames = a2n.len() / self.frame_mean.len();
        let mut frame = Vec::with_capacity(frames * k);
        for chunk in a2n.chunks_exact(self.frame_mean.len()) {
            frame.extend(self.frame_proj.forward(chunk));
        }
        tanh_inplace(&mut frame);
        let mut pooled = vec![0.0f32; k];
        for row in frame.chunks_exact(k) {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= frames as f32);
        let mut h = self.hidden.forward(&pooled);
        tanh_inplace(&mut h);
        let mut out = self.head.forward(&h);
        if self.arch.task == Task::Regression {
            out.iter_mut()
                .for_each(|o| *o = self.arch.center + self.arch.scale * *o);
        }
        Readout {
            frame,
            pooled,
            h,
            out,
        }
    }

    /// Input cotangent; accumulates parameter gradients when `grad` is given.
    fn backward(
        &self,
        x: &[f32],
        fw: &Forward,
        dout: &[f32],
        mut grad: Option<&mut ToyVideoNet>,
    ) -> Vec<f32> {
        let t = &fw.trunk;
        let dn = self.readout_backward(&t.a2n, &fw.readout, dout, grad.as_deref_mut());
        let da2: Vec<f32> = dn
            .chunks_exact(self.frame_inv_std.len())
            .flat_map(|row| row.iter().zip(&self.frame_inv_std).map(|(d, s)| d * s))
            .collect();
        let dp2 = softplus_backward(&t.a2, &da2);
        let da1 = self.conv2.backward_input(&dp2, t.a1d);
        let dp1 = softplus_backward(&t.a1, &da1);
        let dx = self.conv1.backward_input(&dp1, t.d);
        if let Some(g) = grad {
            self.conv2.backward_params(&t.a1, t.a1d, &dp2, &mut g.conv2);
            self.conv1.backward_params(x, t.d, &dp1, &mut g.conv1);
        }
        dx
    }

    /// Cotangent of the standardised `conv2` map; accumulates gradients of
    /// the dense layers when `grad` is given.
    fn readout_backward(
        &self,
        a2n: &[f32],
        ro: &Readout,
        dout: &[f32],
        grad: Option<&mut ToyVideoNet>,
    ) -> Vec<f32> {
        let dout: Vec<f32> = if self.arch.task == Task::Regression {
            dout.iter().map(|g| g * self.arch.scale).collect()
        } else {
            dout.to_vec()
        };
        let dh = self.head.backward_input(&dout);
        let dph = tanh_backward(&ro.h, &dh);
        let dpooled = self.hidden.backward_input(&dph);
        let k = self.arch.frame_dim;
        let inv_f = k as f32 / ro.frame.len() as f32;
        let dframe_in: Vec<f32> = ro
            .frame
            .chunks_exact(k)
            .flat_map(|row| {
                row.iter()
                    .zip(&dpooled)
                    .map(|(&y, &g)| g * inv_f * (1.0 - y * y))
            })
            .collect();
        let mut dn = Vec::with_capacity(a2n.len());
        for g in dframe_in.chunks_exact(k) {
            dn.extend(self.frame_proj.backward_input(g));
        }
        if let Some(g) = grad {
            self.head.backward_params(&ro.h, &dout, &mut g.head);
            self.hidden.backward_params(&ro.pooled, &dph, &mut g.hidden);
            for (x, g_row) in a2n
                .chunks_exact(self.frame_mean.len())
                .zip(dframe_in.chunks_exact(k))
            {
                self.frame_proj.backward_params(x, g_row, &mut g.frame_proj);
            }
        }
        dn
    }

    fn check_cotangent(&self, cotangent: &[f32]) -> Result<()> {
        if cotangent.len() != self.arch.outputs {
            return Err(Error::ShapeMismatch(format!(
                "output cotangent has {} entries, model has {} outputs",
                cotangent.len(),
                self.arch.outputs
            )));
        }
        Ok(())
    }

    /// Data-dependent init: estimates the `conv2` map standardisation from
    /// all frames of `videos`, then rescales each frame-projection output to
    /// zero mean and unit std on the same frames.
    pub fn init_frame_stats(&mut self, videos: &[Tensor]) -> Result<()> {
        if videos.is_empty() {
            return Err(Error::EmptyInput("no videos for the frame statistics".into()));
        }
        let n_in = self.frame_mean.len();
        self.frame_mean.iter_mut().for_each(|m| *m = 0.0);
        self.frame_inv_std.iter_mut().for_each(|s| *s = 1.0);
        let (mut sum, mut sq) = (vec![0.0f64; n_in], vec![0.0f64; n_in]);
        let mut count = 0usize;
        for v in videos {
            let t = self.trunk(v)?;
            for chunk in t.a2.chunks_exact(n_in) {
                for ((s, q), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(chunk) {
                    *s += x as f64;
                    *q += (x as f64) * (x as f64);
                }
                count += 1;
            }
        }
        let n = count as f64;
        let stds: Vec<f64> = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| (q / n - (s / n).powi(2)).max(0.0).sqrt())
            .collect();
        // near-constant elements (padding borders) would otherwise be
        // amplified without bound
        let floor = 0.05 * stds.iter().sum::<f64>() / n_in as f64 + 1e-6;
        for i in 0..n_in {
            self.frame_mean[i] = (sum[i] / n) as f32;
            self.frame_inv_std[i] = (1.0 / stds[i].max(floor)) as f32;
        }
        let k = self.frame_proj.out_dim;
        let (mut psum, mut psq) = (vec![0.0f64; k], vec![0.0f64; k]);
        for v in videos {
            let t = self.trunk(v)?;
            for chunk in t.a2n.chunks_exact(n_in) {
                for ((s, q), z) in psum.iter_mut().zip(psq.iter_mut()).zip(self.frame_proj.forward(chunk)) {
                    *s += z as f64;
                    *q += (z as f64) * (z as f64);
                }
            }
        }
        for (o, (row, b)) in self
            .frame_proj
            .weight
            .chunks_exact_mut(n_in)
            .zip(self.frame_proj.bias.iter_mut())
            .enumerate()
        {
            let m = psum[o] / n;
            let sd = (psq[o] / n - m * m).max(0.0).sqrt().max(1e-6);
            row.iter_mut().for_each(|w| *w = (*w as f64 / sd) as f32);
            *b = ((*b as f64 - m) / sd) as f32;
        }
        Ok(())
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = params_to_archive(self)?;
        let n = self.frame_mean.len();
        a.insert_f32("frame_norm.mean", vec![n], self.frame_mean.clone())?;
        a.insert_f32("frame_norm.inv_std", vec![n], self.frame_inv_std.clone())?;
        Ok(a)
    }

    pub fn from_archive(arch: TargetArch, a: &TensorArchive) -> Result<Self> {
        let mut m = ToyVideoNet::new(arch, &SeedSpec::new(0, "load"));
        params_from_archive(&mut m, a)?;
        for (name, slot) in [
            ("frame_norm.mean", &mut m.frame_mean),
            ("frame_norm.inv_std", &mut m.frame_inv_std),
        ] {
            let t = a.tensor(name)?;
            if t.len() != slot.len() {
                return Err(Error::ShapeMismatch(format!(
                    "`{name}`: checkpoint has {} values, model {}",
                    t.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(t.data());
        }
        Ok(m)
    }
}

impl TargetModel for ToyVideoNet {
    fn task(&self) -> Task {
        self.arch.task
    }

    fn predict(&self, video: &Tensor) -> Result<Vec<f32>> {
        let t = self.trunk(video)?;
        Ok(self.readout(&t.a2n).out)
    }

    fn layers(&self) -> Vec<String> {
        LAYERS.iter().map(|s| s.to_string()).collect()
    }

    fn features(&self, video: &Tensor, layer: &str) -> Result<Tensor> {
        let fw = self.forward(video)?;
        let (shape, data) = match layer {
            "conv1" => (fw.trunk.a1d.to_shape(), fw.trunk.a1),
            "conv2" => (fw.trunk.a2d.to_shape(), fw.trunk.a2),
            "frame" => (
                vec![fw.trunk.a2d.frames, 1, 1, self.arch.frame_dim],
                fw.readout.frame,
            ),
            "pooled" => (vec![1, 1, 1, fw.readout.pooled.len()], fw.readout.pooled),
            "hidden" => (vec![1, 1, 1, fw.readout.h.len()], fw.readout.h),
            other => {
                return Err(Error::Config(format!(
                    "unknown feature layer `{other}`; available: {}",
                    LAYERS.join(", ")
                )))
            }
        };
        Tensor::new(shape, data)
    }

    fn input_pullback(&self, video: &Tensor, cotangent: &[f32]) -> Result<Tensor> {
        self.check_cotangent(cotangent)?;
        let fw = self.forward(video)?;
        let dx = self.backward(video.data(), &fw, cotangent, None);
        Tensor::new(video.shape().to_vec(), dx)
    }

    fn loss_and_input_grad(
        &self,
        video: &Tensor,
        loss: &dyn Fn(&[f32]) -> Result<(f32, Vec<f32>)>,
    ) -> Result<(Vec<f32>, f32, Tensor)> {
        let fw = self.forward(video)?;
        let (l, dpred) = loss(&fw.readout.out)?;
        self.check_cotangent(&dpred)?;
        let dx = self.backward(video.data(), &fw, &dpred, None);
        Ok((fw.readout.out.clone(), l, Tensor::new(video.shape().to_vec(), dx)?))
    }

    fn content_hash(&self) -> String {
        self.to_archive()
            .map(|a| a.content_hash())
            .unwrap_or_else(|_| "invalid".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetTrainConfig {
    pub conv1: usize,
    pub conv2: usize,
    pub frame_dim: usize,
    pub hidden: usize,
    pub kt: usize,
    /// Training videos used by the data-dependent frame-projection init.
    pub init_videos: usize,
    /// Also update the convolutions. When false they keep their motion
    /// tuned init and only the dense layers are fitted.
    pub train_convs: bool,
    pub train: TrainConfig,
}

impl Default for TargetTrainConfig {
    fn default() -> Self {
        Self {
            conv1: 8,
            conv2: 16,
            frame_dim: 32,
            hidden: 32,
            kt: 3,
            init_videos: 64,
            train_convs: false,
            train: TrainConfig {
                steps: 1000,
                batch_size: 16,
                lr: 3e-3,
                seed: SeedSpec::new(0, "target-train"),
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    /// Validation accuracy (classification) or R² (regression).
    pub val_metric: f32,
    pub val_metric_name: String,
    pub final_train_loss: f32,
    pub curve: LossCurve,
}

/// Classification accuracy or regression R² of `model` on `ds`.
pub fn validation_metric(model: &dyn TargetModel, ds: &Dataset) -> Result<f32> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("empty validation split".into()));
    }
    let mut preds = Vec::with_capacity(ds.len());
    for v in &ds.videos {
        preds.push(model.predict(&v.to_tensor())?);
    }
    match model.task() {
        Task::Classification => {
            let mut hits = 0usize;
            for (p, l) in preds.iter().zip(&ds.labels) {
                if Some(argmax(p)?) == l.class() {
                    hits += 1;
                }
            }
            Ok(hits as f32 / ds.len() as f32)
        }
        Task::Regression => {
            let y: Vec<f64> = ds.labels.iter().map(|l| l.as_f32() as f64).collect();
            let p: Vec<f64> = preds.iter().map(|p| p[0] as f64).collect();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            if ss_tot == 0.0 {
                return Err(Error::UndefinedMetric(
                    "validation targets have zero variance".into(),
                ));
            }
            Ok((1.0 - ss_res / ss_tot) as f32)
        }
    }
}

/// Per-sample training loss and its gradient w.r.t. the model output.
/// Regression loss is measured in units of `arch.scale`.
fn sample_loss(arch: &TargetArch, out: &[f32], label: &Label) -> (f32, Vec<f32>) {
    match (arch.task, label) {
        (Task::Classification, Label::Class(c)) => {
            let p = softmax(out);
            let loss = -(p[*c].max(1e-300)).ln() as f32;
            let g = p
                .iter()
                .enumerate()
                .map(|(i, &pi)| (pi - if i == *c { 1.0 } else { 0.0 }) as f32)
                .collect();
            (loss, g)
        }
        (_, l) => {
            let r = (out[0] - l.as_f32()) / arch.scale;
            (r * r, vec![2.0 * r / arch.scale])
        }
    }
}

fn batch_loss(arch: &TargetArch, out: &[f32], label: &Label, bs: usize) -> (f32, Vec<f32>) {
    let (l, mut dout) = sample_loss(arch, out, label);
    dout.iter_mut().for_each(|v| *v /= bs as f32);
    (l, dout)
}

/// Fits the target model on videos of `train` with Adam.
pub fn train_target(
    train: &Dataset,
    val: &Dataset,
    arch: TargetArch,
    cfg: &TargetTrainConfig,
) -> std::result::Result<(ToyVideoNet, TargetReport), Diverged<ToyVideoNet>> {
    let arch = TargetArch {
        conv1: cfg.conv1,
        conv2: cfg.conv2,
        frame_dim: cfg.frame_dim,
        hidden: cfg.hidden,
        kt: cfg.kt,
        ..arch
    };
    let mut init = ToyVideoNet::new(arch.clone(), &cfg.train.seed.derive("init"));
    let tensors: Vec<Tensor> = train.videos.iter().map(|v| v.to_tensor()).collect();
    if let Err(e) = init.init_frame_stats(&tensors[..tensors.len().min(cfg.init_videos)]) {
        return Err(Diverged {
            iteration: 0,
            reason: e.to_string(),
            last_finite: Box::new(init),
        });
    }
    // frozen convolutions: the standardised maps never change, so compute
    // them once
    let maps: Vec<Vec<f32>> = if cfg.train_convs {
        Vec::new()
    } else {
        let mut maps = Vec::with_capacity(tensors.len());
        for t in &tensors {
            match init.trunk(t) {
                Ok(tr) => maps.push(tr.a2n),
                Err(e) => {
                    return Err(Diverged {
                        iteration: 0,
                        reason: e.to_string(),
                        last_finite: Box::new(init),
                    })
                }
            }
        }
        maps
    };
    let bs = cfg.train.batch_size.max(1).min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let (model, curve) = fit(init, &cfg.train, |p, rng, g| {
        let mut total = 0.0f32;
        for _ in 0..bs {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let out = if cfg.train_convs {
                let Ok(fw) = p.forward(&tensors[i]) else {
                    return f32::NAN;
                };
                let (l, dout) = batch_loss(&arch, &fw.readout.out, &train.labels[i], bs);
                p.backward(tensors[i].data(), &fw, &dout, Some(g));
                l
            } else {
                let ro = p.readout(&maps[i]);
                let (l, dout) = batch_loss(&arch, &ro.out, &train.labels[i], bs);
                p.readout_backward(&maps[i], &ro, &dout, Some(g));
                l
            };
            total += out;
        }
        total / bs as f32
    })?;
    let eval = if val.is_empty() { train } else { val };
    let val_metric = validation_metric(&model, eval).unwrap_or(f32::NAN);
    let final_train_loss = curve.tail_mean(50);
    Ok((
        model,
        TargetReport {
            val_metric,
            val_metric_name: match arch.task {
                Task::Classification => "accuracy".into(),
                Task::Regression => "r2".into(),
            },
            final_train_loss,
            curve,
        },
    ))
}
