//! Noise schedule, forward noising, deterministic DDIM stepping and the
//! unguided reverse loop.
//!
//! Schedule arithmetic is kept in `f64`; latents are `f32`. Each step is
//! computed in `f64` and rounded once.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

/// `beta_t` for `t = 1..=T_train` and `alpha_bar_t = prod_{k<=t} (1 - beta_k)`,
/// with `alpha_bar_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Any betas in `[0, 1)`. Zero betas are allowed here for test fixtures;
    /// [`make_schedule`] only produces strictly positive ones.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one timestep".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::Config(format!("beta {b} outside [0,1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0f64;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn t_train(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t`, 1-based.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bar_t` for `t` in `0..=T_train`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or_else(|| {
            Error::Config(format!("timestep {t} beyond T_train = {}", self.t_train()))
        })
    }

    /// Coefficient `sqrt((1 - alpha_bar_t) / alpha_bar_t)` of the guidance update.
    pub fn guidance_coefficient(&self, t: usize) -> Result<f64> {
        let a = self.alpha_bar(t)?;
        Ok(((1.0 - a) / a).sqrt())
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.betas {
            h.update(b.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Linear betas from `beta_min` to `beta_max` inclusive.
pub fn make_schedule(t_train: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_train == 0 {
        return Err(Error::Config("T_train must be at least 1".into()));
    }
    if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas = (0..t_train)
        .map(|i| {
            if t_train == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (t_train - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub t_train: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_train: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.t_train, self.beta_min, self.beta_max)
    }
}

/// Strictly increasing training timesteps `t_1 < ... < t_T`; `t_T` is the
/// noising depth and `t_0 = 0` is implied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepMap {
    steps: Vec<usize>,
}

impl TimestepMap {
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn depth(&self) -> usize {
        *self.steps.last().expect("maps are nonempty")
    }

    /// `(t, t_prev)` pairs in reverse (denoising) order, ending with `(t_1, 0)`.
    pub fn reverse_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.steps.len())
            .rev()
            .map(|i| (self.steps[i], if i == 0 { 0 } else { self.steps[i - 1] }))
            .collect()
    }
}

/// `T` steps spread evenly over the whole schedule: `t_i = round(i * T_train / T)`.
pub fn make_timestep_map(schedule: &NoiseSchedule, steps: usize) -> Result<TimestepMap> {
    make_timestep_map_to_depth(schedule, steps, schedule.t_train())
}

/// `T` steps spread evenly up to `depth`: `t_i = round(i * depth / T)`.
pub fn make_timestep_map_to_depth(
    schedule: &NoiseSchedule,
    steps: usize,
    depth: usize,
) -> Result<TimestepMap> {
    let t_train = schedule.t_train();
    if steps == 0 || steps > t_train {
        return Err(Error::Config(format!("T = {steps} outside 1..={t_train}")));
    }
    if depth < steps || depth > t_train {
        return Err(Error::Config(format!(
            "noising depth {depth} must lie in {steps}..={t_train}"
        )));
    }
    let steps = (1..=steps)
        .map(|i| (i as f64 * depth as f64 / steps as f64).round() as usize)
        .collect();
    Ok(TimestepMap { steps })
}

/// How the `T` inference steps are placed on the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// `t_i = round(i * T_train / T)`: always noised to `T_train`.
    Full,
    /// `t_i = i * stride`: noising depth grows with `T`.
    Stride(usize),
}

impl Spacing {
    pub fn build(&self, schedule: &NoiseSchedule, steps: usize) -> Result<TimestepMap> {
        match *self {
            Spacing::Full => make_timestep_map(schedule, steps),
            Spacing::Stride(s) => {
                if s == 0 {
                    return Err(Error::Config("stride must be at least 1".into()));
                }
                let depth = steps
                    .checked_mul(s)
                    .ok_or_else(|| Error::Config("noising depth overflows".into()))?;
                make_timestep_map_to_depth(schedule, steps, depth)
            }
        }
    }
}

fn check_dims(a: &LatentTensor, b: &LatentTensor, what: &str) -> Result<()> {
    a.check_same_dims(b, what)
}

/// `sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn q_sample(
    z0: &LatentTensor,
    t: usize,
    eps: &LatentTensor,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    check_dims(z0, eps, "q_sample")?;
    let a = schedule.alpha_bar(t)?;
    let (s0, s1) = (a.sqrt(), (1.0 - a).sqrt());
    let data = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&z, &e)| (s0 * z as f64 + s1 * e as f64) as f32)
        .collect();
    LatentTensor::new(z0.dims(), data)
}

/// Deterministic (eta = 0) DDIM step. Returns `(z_prev, v_t)` where
/// `v_t = (z_t - sqrt(1 - a_t) eps_hat) / sqrt(a_t)` and `z_prev` re-noises
/// `v_t` to `t_prev` with the same `eps_hat`.
pub fn ddim_step(
    z_t: &LatentTensor,
    eps_hat: &LatentTensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<(LatentTensor, LatentTensor)> {
    if t_prev >= t {
        return Err(Error::Ordering { t, t_prev });
    }
    check_dims(z_t, eps_hat, "ddim_step")?;
    let a = schedule.alpha_bar(t)?;
    let (s0, s1) = (a.sqrt(), (1.0 - a).sqrt());
    let v: Vec<f32> = z_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&z, &e)| ((z as f64 - s1 * e as f64) / s0) as f32)
        .collect();
    let v = LatentTensor::new(z_t.dims(), v).map_err(|_| Error::Numeric {
        step: t,
        what: "clean-latent estimate".into(),
    })?;
    let z_prev = q_sample(&v, t_prev, eps_hat, schedule)?;
    Ok((z_prev, v))
}

/// Noise predictor `eps_theta(z_t, emb(c), t)`.
pub trait NoisePredictor: Send + Sync {
    fn predict_noise(&self, z_t: &LatentTensor, cond: &Label, t: usize) -> Result<LatentTensor>;

    /// Hash of the codec whose latent space this predictor was trained on,
    /// or `None` if it works with any codec.
    fn codec_hash(&self) -> Option<String>;

    /// Hash of the noise schedule the predictor was trained with.
    fn schedule_hash(&self) -> String;

    fn content_hash(&self) -> String;
}

/// Exact posterior noise for a single-point dataset `{z0*}`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub z0: LatentTensor,
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for OracleDenoiser {
    fn predict_noise(&self, z_t: &LatentTensor, _cond: &Label, t: usize) -> Result<LatentTensor> {
        check_dims(z_t, &self.z0, "oracle denoiser")?;
        if t == 0 {
            return Err(Error::Config("noise prediction needs t >= 1".into()));
        }
        let a = self.schedule.alpha_bar(t)?;
        let (s0, s1) = (a.sqrt(), (1.0 - a).sqrt());
        let data = z_t
            .data()
            .iter()
            .zip(self.z0.data())
            .map(|(&z, &z0)| ((z as f64 - s0 * z0 as f64) / s1) as f32)
            .collect();
        LatentTensor::new(z_t.dims(), data)
    }

    fn codec_hash(&self) -> Option<String> {
        None
    }

    fn schedule_hash(&self) -> String {
        self.schedule.content_hash()
    }

    fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"oracle");
        for v in self.z0.data() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStep {
    pub t: usize,
    /// Latent entering the step (`z_t`).
    pub z: LatentTensor,
    /// Clean-latent estimate `v_t`.
    pub v: LatentTensor,
}

/// Unguided deterministic reverse loop from `z_T` down the map.
pub fn sample_unguided(
    z_big_t: &LatentTensor,
    cond: &Label,
    map: &TimestepMap,
    schedule: &NoiseSchedule,
    denoiser: &dyn NoisePredictor,
) -> Result<(LatentTensor, Vec<SampleStep>)> {
    let mut z = z_big_t.clone();
    let mut trace = Vec::with_capacity(map.len());
    for (t, t_prev) in map.reverse_pairs() {
        let eps = denoiser.predict_noise(&z, cond, t)?;
        let (z_prev, v) = ddim_step(&z, &eps, t, t_prev, schedule)?;
        trace.push(SampleStep { t, z, v });
        z = z_prev;
    }
    Ok((z, trace))
}
