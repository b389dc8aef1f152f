//! Evaluation metrics for counterfactual runs.
//!
//! Everything is accumulated in `f64`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Label, Task};
use crate::error::{Error, Result};
use crate::guidance::CounterfactualResult;
use crate::refine::l1_distance;
use crate::target::{argmax, TargetModel};
use crate::tensor::{Tensor, VideoTensor};

/// Targets `y'` and predictions `y_hat` of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPairSet {
    targets: Vec<f64>,
    preds: Vec<f64>,
}

impl PredictionPairSet {
    pub fn new(targets: Vec<f64>, preds: Vec<f64>) -> Result<Self> {
        if targets.len() != preds.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} targets vs {} predictions",
                targets.len(),
                preds.len()
            )));
        }
        if targets.iter().chain(&preds).any(|v| !v.is_finite()) {
            return Err(Error::Range("prediction pairs must be finite".into()));
        }
        Ok(Self { targets, preds })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyInput("no prediction pairs".into()));
        }
        Ok(())
    }
}

/// `1 - SS_res / SS_tot` with the target mean as baseline.
pub fn r_squared(p: &PredictionPairSet) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "R^2 needs at least 2 pairs, got {}",
            p.len()
        )));
    }
    let mean = p.targets.iter().sum::<f64>() / p.len() as f64;
    let ss_tot: f64 = p.targets.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "R^2 is undefined when all targets are equal".into(),
        ));
    }
    let ss_res: f64 = p
        .targets
        .iter()
        .zip(&p.preds)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mae(p: &PredictionPairSet) -> Result<f64> {
    p.nonempty()?;
    Ok(p.targets
        .iter()
        .zip(&p.preds)
        .map(|(y, f)| (y - f).abs())
        .sum::<f64>()
        / p.len() as f64)
}

pub fn rmse(p: &PredictionPairSet) -> Result<f64> {
    p.nonempty()?;
    let mse = p
        .targets
        .iter()
        .zip(&p.preds)
        .map(|(y, f)| (y - f).powi(2))
        .sum::<f64>()
        / p.len() as f64;
    Ok(mse.sqrt())
}

/// Fraction of predicted classes equal to their targets.
pub fn flip_ratio(preds: &[usize], targets: &[usize]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    let hits = preds.iter().zip(targets).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

fn check_same(x: &VideoTensor, y: &VideoTensor) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {}",
            x.dims(),
            y.dims()
        )));
    }
    Ok(())
}

/// SSIM with whole-frame statistics (all pixels and channels of a frame
/// pooled, population variances), averaged over frames. Peak value 1.
pub fn ssim_global(x: &VideoTensor, y: &VideoTensor) -> Result<f64> {
    check_same(x, y)?;
    let d = x.dims();
    let mut total = 0.0;
    for f in 0..d.frames {
        let (a, b) = (x.frame(f), y.frame(f));
        let n = a.len() as f64;
        let mx = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let my = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for (&p, &q) in a.iter().zip(b) {
            let (dp, dq) = (p as f64 - mx, q as f64 - my);
            vx += dp * dp;
            vy += dq * dq;
            cxy += dp * dq;
        }
        total += ssim_from_moments(mx, my, vx / n, vy / n, cxy / n);
    }
    Ok(total / d.frames as f64)
}

/// Sliding-window SSIM: uniform `window x window` patches per channel with
/// unit stride, averaged over patches, channels and frames. Windows are
/// clipped to the frame size.
pub fn ssim_windowed(x: &VideoTensor, y: &VideoTensor, window: usize) -> Result<f64> {
    check_same(x, y)?;
    if window == 0 {
        return Err(Error::Config("SSIM window must be >= 1".into()));
    }
    let d = x.dims();
    let (wh, ww) = (window.min(d.height), window.min(d.width));
    let mut total = 0.0;
    let mut count = 0usize;
    for f in 0..d.frames {
        for c in 0..d.channels {
            for y0 in 0..=d.height - wh {
                for x0 in 0..=d.width - ww {
                    let n = (wh * ww) as f64;
                    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for yy in y0..y0 + wh {
                        for xx in x0..x0 + ww {
                            let i = d.index(f, yy, xx, c);
                            let (p, q) = (x.data()[i] as f64, y.data()[i] as f64);
                            sx += p;
                            sy += q;
                            sxx += p * p;
                            syy += q * q;
                            sxy += p * q;
                        }
                    }
                    let (mx, my) = (sx / n, sy / n);
                    let vx = (sxx / n - mx * mx).max(0.0);
                    let vy = (syy / n - my * my).max(0.0);
                    total += ssim_from_moments(mx, my, vx, vy, sxy / n - mx * my);
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Per layer: unit-normalise each feature vector along channels, take the
/// squared difference summed over channels, and average it over spatial
/// positions and frames. Layer values are summed.
pub fn perceptual_distance(
    x: &Tensor,
    y: &Tensor,
    target: &dyn TargetModel,
    layers: &[String],
) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if layers.is_empty() {
        return Err(Error::Config(
            "perceptual distance needs at least one layer".into(),
        ));
    }
    let available = target.layers();
    let mut total = 0.0;
    for layer in layers {
        if !available.contains(layer) {
            return Err(Error::Config(format!(
                "unknown feature layer `{layer}`; available: {}",
                available.join(", ")
            )));
        }
        let (fa, fb) = (target.features(x, layer)?, target.features(y, layer)?);
        let c = *fa.shape().last().expect("features have 4 axes");
        let mut acc = 0.0;
        let mut positions = 0usize;
        for (a, b) in fa.data().chunks_exact(c).zip(fb.data().chunks_exact(c)) {
            let na = a.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt() + 1e-10;
            let nb = b.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt() + 1e-10;
            acc += a
                .iter()
                .zip(b)
                .map(|(&p, &q)| (p as f64 / na - q as f64 / nb).powi(2))
                .sum::<f64>();
            positions += 1;
        }
        total += acc / positions as f64;
    }
    Ok(total)
}

/// Sample mean and unbiased covariance of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "feature statistics need at least 2 vectors, got {}",
                vectors.len()
            )));
        }
        let d = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != d) {
            return Err(Error::ShapeMismatch(format!(
                "feature vectors of length {d} and {}",
                v.len()
            )));
        }
        let n = vectors.len() as f64;
        let mean = DVector::from_fn(d, |j, _| vectors.iter().map(|v| v[j]).sum::<f64>() / n);
        let mut cov = DMatrix::zeros(d, d);
        for v in vectors {
            let c = DVector::from_fn(d, |j, _| v[j] - mean[j]);
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        Ok(Self {
            mean,
            cov,
            count: vectors.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// One vector per frame per video (image-level analogue).
    PerFrame,
    /// One temporally pooled vector per video (video-level analogue).
    TemporalPooled,
}

/// Feature statistics of `videos` under the target model: the per-frame
/// `frame` layer or the temporally pooled `pooled` layer.
pub fn feature_stats(
    videos: &[&VideoTensor],
    target: &dyn TargetModel,
    mode: FeatureMode,
) -> Result<FeatureStats> {
    let layer = match mode {
        FeatureMode::PerFrame => "frame",
        FeatureMode::TemporalPooled => "pooled",
    };
    let mut vectors = Vec::new();
    for v in videos {
        let f = target.features(&v.to_tensor(), layer)?;
        let c = *f.shape().last().expect("features have 4 axes");
        for row in f.data().chunks_exact(c) {
            vectors.push(row.iter().map(|&x| x as f64).collect());
        }
    }
    FeatureStats::from_vectors(&vectors)
}

fn symmetric_sqrt(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let (tol, min) = eigen_tolerance(&eig.eigenvalues);
    if min < -tol {
        return Err(Error::Numeric {
            step: 0,
            what: format!("{what} has eigenvalue {min:.3e}, below the PSD tolerance -{tol:.1e}"),
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let trace = roots.sum();
    Ok((
        &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose(),
        trace,
    ))
}

/// Eigenvalues above `-1e-6 * max(1, largest |eigenvalue|)` are treated as
/// round-off and clamped to zero.
fn eigen_tolerance(values: &DVector<f64>) -> (f64, f64) {
    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    (1e-6 * scale, values.min())
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// `Tr((S_a S_b)^{1/2})` is evaluated as the trace of the square root of the
/// symmetric matrix `S_a^{1/2} S_b S_a^{1/2}`, which has the same spectrum.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let (sqrt_a, _) = symmetric_sqrt(&a.cov, "first covariance")?;
    symmetric_sqrt(&b.cov, "second covariance")?;
    let inner = &sqrt_a * &b.cov * &sqrt_a;
    let (_, tr_sqrt) = symmetric_sqrt(&inner, "covariance product")?;
    let dmu = (&a.mean - &b.mean).norm_squared();
    let value = dmu + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(value.max(0.0))
}

/// Metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub index: usize,
    pub y_target: Label,
    pub pred_f: Label,
    pub pred_cf: Label,
    pub pred_mask_cf: Option<Label>,
    pub ssim_cf: f64,
    pub perceptual_cf: f64,
    /// Mean absolute pixel difference to the factual video.
    pub l1_cf: f64,
    pub ssim_mask_cf: Option<f64>,
    pub perceptual_mask_cf: Option<f64>,
    pub l1_mask_cf: Option<f64>,
    pub mask_density: Option<f64>,
}

/// Aggregate metrics of one output kind (`x_cf` or `x_mask_cf`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub r2: Option<f64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub flip_ratio: Option<f64>,
    /// Mean over runs.
    pub ssim: f64,
    /// Mean over runs.
    pub perceptual: f64,
    /// Mean over runs.
    pub l1: f64,
    /// Per-frame feature Fréchet distance to the factual set.
    pub frechet_frame: Option<f64>,
    /// Temporally pooled feature Fréchet distance to the factual set.
    pub frechet_video: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub samples: usize,
    pub layers: Vec<String>,
    pub runs: Vec<RunMetrics>,
    pub cf: AggregateMetrics,
    pub mask_cf: Option<AggregateMetrics>,
    pub mean_mask_density: Option<f64>,
    /// Metrics that could not be computed, and why.
    pub notes: Vec<String>,
}

fn label_of(task: Task, pred: &[f32]) -> Result<Label> {
    crate::target::prediction_label(task, pred)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Evaluates `x_cf` (and `x_mask_cf` when every run has one) against the
/// factual videos.
pub fn evaluate_run_set(
    results: &[CounterfactualResult],
    target: &dyn TargetModel,
    layers: &[String],
) -> Result<MetricsReport> {
    let first = results
        .first()
        .ok_or_else(|| Error::EmptyInput("no runs to evaluate".into()))?;
    let task = first.y_target.task();
    if let Some(r) = results
        .iter()
        .find(|r| r.y_target.task() != task || r.config.task != task)
    {
        return Err(Error::Config(format!(
            "mixed tasks in one evaluation: {task} and {}",
            r.y_target.task()
        )));
    }
    if target.task() != task {
        return Err(Error::Config(format!(
            "{task} runs evaluated with a {} model",
            target.task()
        )));
    }
    let dims = first.x_f.dims();
    if let Some(r) = results
        .iter()
        .find(|r| r.x_f.dims() != dims || r.x_cf.dims() != dims)
    {
        return Err(Error::ShapeMismatch(format!(
            "runs of shape {dims} and {}",
            r.x_f.dims()
        )));
    }
    let with_mask = results
        .iter()
        .all(|r| r.x_mask_cf.is_some() && r.pred_mask_cf.is_some());
    let mut runs = Vec::with_capacity(results.len());
    for (index, r) in results.iter().enumerate() {
        let (xf, xc) = (r.x_f.to_tensor(), r.x_cf.to_tensor());
        let n = dims.len() as f64;
        let mut m = RunMetrics {
            index,
            y_target: r.y_target,
            pred_f: label_of(task, &r.pred_f)?,
            pred_cf: label_of(task, &r.pred_cf)?,
            pred_mask_cf: None,
            ssim_cf: ssim_global(&r.x_f, &r.x_cf)?,
            perceptual_cf: perceptual_distance(&xf, &xc, target, layers)?,
            l1_cf: l1_distance(&r.x_cf, &r.x_f)? / n,
            ssim_mask_cf: None,
            perceptual_mask_cf: None,
            l1_mask_cf: None,
            mask_density: r.mask_density.map(f64::from),
        };
        if with_mask {
            let xm = r.x_mask_cf.as_ref().expect("checked");
            m.pred_mask_cf = Some(label_of(task, r.pred_mask_cf.as_ref().expect("checked"))?);
            m.ssim_mask_cf = Some(ssim_global(&r.x_f, xm)?);
            m.perceptual_mask_cf = Some(perceptual_distance(&xf, &xm.to_tensor(), target, layers)?);
            m.l1_mask_cf = Some(l1_distance(xm, &r.x_f)? / n);
        }
        runs.push(m);
    }
    let mut notes = Vec::new();
    let factual: Vec<&VideoTensor> = results.iter().map(|r| &r.x_f).collect();
    let cf_videos: Vec<&VideoTensor> = results.iter().map(|r| &r.x_cf).collect();
    let cf = aggregate(
        task,
        &runs
            .iter()
            .map(|m| (m.y_target, m.pred_cf, m.ssim_cf, m.perceptual_cf, m.l1_cf))
            .collect::<Vec<_>>(),
        &factual,
        &cf_videos,
        target,
        "x_cf",
        &mut notes,
    )?;
    let mask_cf = if with_mask {
        let masked: Vec<&VideoTensor> = results
            .iter()
            .map(|r| r.x_mask_cf.as_ref().expect("checked"))
            .collect();
        Some(aggregate(
            task,
            &runs
                .iter()
                .map(|m| {
                    (
                        m.y_target,
                        m.pred_mask_cf.expect("checked"),
                        m.ssim_mask_cf.expect("checked"),
                        m.perceptual_mask_cf.expect("checked"),
                        m.l1_mask_cf.expect("checked"),
                    )
                })
                .collect::<Vec<_>>(),
            &factual,
            &masked,
            target,
            "x_mask_cf",
            &mut notes,
        )?)
    } else {
        None
    };
    let densities: Vec<f64> = runs.iter().filter_map(|m| m.mask_density).collect();
    Ok(MetricsReport {
        task,
        samples: results.len(),
        layers: layers.to_vec(),
        mean_mask_density: if densities.is_empty() {
            None
        } else {
            Some(mean(densities.into_iter()))
        },
        runs,
        cf,
        mask_cf,
        notes,
    })
}

type RunRow = (Label, Label, f64, f64, f64);

fn aggregate(
    task: Task,
    rows: &[RunRow],
    factual: &[&VideoTensor],
    videos: &[&VideoTensor],
    target: &dyn TargetModel,
    name: &str,
    notes: &mut Vec<String>,
) -> Result<AggregateMetrics> {
    let mut out = AggregateMetrics {
        ssim: mean(rows.iter().map(|r| r.2)),
        perceptual: mean(rows.iter().map(|r| r.3)),
        l1: mean(rows.iter().map(|r| r.4)),
        ..AggregateMetrics::default()
    };
    match task {
        Task::Regression => {
            let pairs = PredictionPairSet::new(
                rows.iter().map(|r| r.0.as_f32() as f64).collect(),
                rows.iter().map(|r| r.1.as_f32() as f64).collect(),
            )?;
            out.mae = Some(mae(&pairs)?);
            out.rmse = Some(rmse(&pairs)?);
            match r_squared(&pairs) {
                Ok(v) => out.r2 = Some(v),
                Err(e) => notes.push(format!("{name}: R^2 not computed: {e}")),
            }
        }
        Task::Classification => {
            let preds: Vec<usize> = rows
                .iter()
                .map(|r| r.1.class().unwrap_or(usize::MAX))
                .collect();
            let targets: Vec<usize> = rows
                .iter()
                .map(|r| r.0.class().unwrap_or(usize::MAX))
                .collect();
            out.flip_ratio = Some(flip_ratio(&preds, &targets)?);
            for (mode, slot) in [
                (FeatureMode::PerFrame, &mut out.frechet_frame),
                (FeatureMode::TemporalPooled, &mut out.frechet_video),
            ] {
                let value = feature_stats(factual, target, mode)
                    .and_then(|a| feature_stats(videos, target, mode).map(|b| (a, b)))
                    .and_then(|(a, b)| frechet_distance(&a, &b));
                match value {
                    Ok(v) => *slot = Some(v),
                    Err(e) => notes.push(format!(
                        "{name}: {mode:?} Fréchet distance not computed: {e}"
                    )),
                }
            }
        }
    }
    Ok(out)
}

/// Argmax class of each prediction vector.
pub fn predicted_classes(preds: &[Vec<f32>]) -> Result<Vec<usize>> {
    preds.iter().map(|p| argmax(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims4;

    fn pairs(t: &[f64], p: &[f64]) -> PredictionPairSet {
        PredictionPairSet::new(t.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn regression_metrics_examples() {
        let t = [10.0, 20.0, 30.0];
        assert_eq!(r_squared(&pairs(&t, &t)).unwrap(), 1.0);
        assert_eq!(r_squared(&pairs(&t, &[20.0; 3])).unwrap(), 0.0);
        let v = r_squared(&pairs(&t, &[12.0, 18.0, 33.0])).unwrap();
        assert!((v - (1.0 - 17.0 / 200.0)).abs() < 1e-12);
        assert!(matches!(
            r_squared(&pairs(&[5.0, 5.0], &[1.0, 2.0])),
            Err(Error::UndefinedMetric(_))
        ));
        let one = pairs(&[0.0], &[3.0]);
        assert_eq!((mae(&one).unwrap(), rmse(&one).unwrap()), (3.0, 3.0));
        let e = pairs(&[0.0; 4], &[1.0, -1.0, 2.0, -2.0]);
        assert_eq!(mae(&e).unwrap(), 1.5);
        assert!((rmse(&e).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(mae(&pairs(&[], &[])), Err(Error::EmptyInput(_))));
        assert!(PredictionPairSet::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn flip_ratio_examples() {
        assert_eq!(flip_ratio(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(flip_ratio(&[0, 0], &[1, 2]).unwrap(), 0.0);
        let p = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        assert_eq!(flip_ratio(&p, &[1; 10]).unwrap(), 0.7);
        assert!(matches!(
            flip_ratio(&[1], &[1, 2]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn ssim_examples() {
        let d = Dims4::new(2, 4, 4, 3);
        let x =
            VideoTensor::new(d, (0..d.len()).map(|i| (i % 11) as f32 / 11.0).collect()).unwrap();
        assert_eq!(ssim_global(&x, &x).unwrap(), 1.0);
        let (a, b) = (0.2f32, 0.7f32);
        let ca = VideoTensor::new(d, vec![a; d.len()]).unwrap();
        let cb = VideoTensor::new(d, vec![b; d.len()]).unwrap();
        let (a, b) = (a as f64, b as f64);
        let expect = (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
        assert!((ssim_global(&ca, &cb).unwrap() - expect).abs() < 1e-12);
        assert!((ssim_windowed(&x, &x, 3).unwrap() - 1.0).abs() < 1e-12);
        let other = VideoTensor::zeros(Dims4::new(1, 4, 4, 3)).unwrap();
        assert!(matches!(
            ssim_global(&x, &other),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn feature_stats_examples() {
        let s = FeatureStats::from_vectors(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!((s.mean[0], s.cov[(0, 0)]), (1.0, 2.0));
        let dup = FeatureStats::from_vectors(&vec![vec![1.0, 2.0]; 5]).unwrap();
        assert!(dup.cov.iter().all(|&v| v == 0.0));
        assert!(matches!(
            FeatureStats::from_vectors(&[vec![1.0]]),
            Err(Error::InsufficientData(_))
        ));
    }

    fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> FeatureStats {
        FeatureStats {
            mean: DVector::from_vec(mean),
            cov,
            count: 10,
        }
    }

    #[test]
    fn frechet_analytic_cases() {
        let a = stats(vec![0.0], DMatrix::from_element(1, 1, 1.0));
        let b = stats(vec![1.0], DMatrix::from_element(1, 1, 1.0));
        assert!((frechet_distance(&a, &a).unwrap()).abs() < 1e-6);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-6);
        let da = stats(
            vec![0.0, 0.0],
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
        );
        let db = stats(
            vec![0.0, 0.0],
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
        );
        assert!((frechet_distance(&da, &db).unwrap() - 2.0).abs() < 1e-6);
        let bad = stats(
            vec![0.0, 0.0],
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
        );
        assert!(matches!(
            frechet_distance(&bad, &da),
            Err(Error::Numeric { .. })
        ));
        let wrong = stats(vec![0.0], DMatrix::from_element(1, 1, 1.0));
        assert!(matches!(
            frechet_distance(&wrong, &da),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
