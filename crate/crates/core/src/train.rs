//! Shared mini-batch Adam loop used by every trainable component.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::nn::{all_finite, zero_grad, Adam, Parameterized};
use crate::rng::{SeedSpec, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Cosine-decay the learning rate to `lr * final_lr_ratio`.
    pub cosine: bool,
    pub final_lr_ratio: f32,
    pub seed: SeedSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 2e-3,
            cosine: true,
            final_lr_ratio: 0.05,
            seed: SeedSpec::new(0, "train"),
        }
    }
}

/// Training stopped on a non-finite loss or gradient.
#[derive(Debug)]
pub struct Diverged<P> {
    pub iteration: usize,
    pub reason: String,
    /// Parameters after the last step whose loss and gradients were finite.
    pub last_finite: Box<P>,
}

impl<P> From<Diverged<P>> for Error {
    fn from(d: Diverged<P>) -> Self {
        Error::Training {
            iteration: d.iteration,
            reason: d.reason,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub losses: Vec<f32>,
}

impl LossCurve {
    /// Mean of the last `n` recorded losses.
    pub fn tail_mean(&self, n: usize) -> f32 {
        let n = n.min(self.losses.len()).max(1);
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f32>() / tail.len().max(1) as f32
    }
}

/// Runs `cfg.steps` Adam steps. `batch` receives the current parameters, the
/// batch RNG and a zeroed gradient buffer; it returns the batch loss and
/// fills the gradients.
pub fn fit<P, F>(
    mut params: P,
    cfg: &TrainConfig,
    mut batch: F,
) -> Result<(P, LossCurve), Diverged<P>>
where
    P: Parameterized + Clone,
    F: FnMut(&P, &mut StreamRng, &mut P) -> f32,
{
    let mut rng = cfg.seed.derive("batches").rng();
    let mut opt = Adam::new(cfg.lr);
    let mut grads = params.clone();
    let mut curve = LossCurve::default();
    for step in 0..cfg.steps {
        zero_grad(&mut grads);
        let loss = batch(&params, &mut rng, &mut grads);
        if !loss.is_finite() || !all_finite(&grads) {
            return Err(Diverged {
                iteration: step,
                reason: format!("non-finite loss or gradient (loss = {loss})"),
                last_finite: Box::new(params),
            });
        }
        curve.losses.push(loss);
        opt.lr = if cfg.cosine && cfg.steps > 1 {
            let p = step as f32 / (cfg.steps - 1) as f32;
            let floor = cfg.lr * cfg.final_lr_ratio;
            floor + (cfg.lr - floor) * 0.5 * (1.0 + (std::f32::consts::PI * p).cos())
        } else {
            cfg.lr
        };
        let before = params.clone();
        opt.step(&mut params, &grads);
        if !all_finite(&params) {
            return Err(Diverged {
                iteration: step,
                reason: "parameters became non-finite".into(),
                last_finite: Box::new(before),
            });
        }
    }
    Ok((params, curve))
}
