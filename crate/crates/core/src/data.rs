//! Synthetic toy video tasks.
//!
//! * Moving shape (classification): a coloured square translating at constant
//!   speed; the label is the motion direction.
//! * Pulsating disc (regression): a disc whose area follows one cosine cycle
//!   per clip; the label is the "ejection fraction"
//!   `100 * (A_max - A_min) / A_max`.
//!
//! Every sample is a pure function of `(config, global index)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{archive_load, archive_save, TensorArchive};
use crate::error::{Error, Result};
use crate::rng::SeedSpec;
use crate::tensor::{Dims4, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

/// A class id or a scalar target. Used for dataset labels, model predictions
/// reduced to a decision, and counterfactual targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Class(usize),
    Value(f32),
}

impl Label {
    pub fn task(&self) -> Task {
        match self {
            Label::Class(_) => Task::Classification,
            Label::Value(_) => Task::Regression,
        }
    }

    pub fn as_f32(&self) -> f32 {
        match *self {
            Label::Class(k) => k as f32,
            Label::Value(v) => v,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match *self {
            Label::Class(k) => Some(k),
            Label::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f32> {
        match *self {
            Label::Value(v) => Some(v),
            Label::Class(_) => None,
        }
    }
}

/// The class id or the value, as a bare number.
impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Class(k) => write!(f, "{k}"),
            Label::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Motion directions as `(dy, dx)` unit steps, indexed by class id.
pub const DIRECTIONS: [(i32, i32); 8] = [
    (-1, 0),
    (1, 0),
    (0, -1),
    (0, 1),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
];

pub const DIRECTION_NAMES: [&str; 8] = [
    "up",
    "down",
    "left",
    "right",
    "up-left",
    "up-right",
    "down-left",
    "down-right",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRange {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub task: Task,
    pub splits: Vec<SplitRange>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Class count `K` (classification only).
    pub classes: usize,
    /// Label range for the regression task, in ef units.
    pub ef_range: (f32, f32),
    /// Square side (classification) in pixels.
    pub shape_size: f32,
    /// Displacement per frame in pixels (classification).
    pub speed: f32,
    /// Maximum disc radius range (regression) in pixels.
    pub radius_range: (f32, f32),
    pub background_level: f32,
    pub foreground_level: f32,
    /// Half-width of the additive uniform pixel noise.
    pub noise_amp: f32,
    pub seed: SeedSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::classification(400, 100, 100)
    }
}

impl DatasetConfig {
    pub fn sizes(train: usize, val: usize, test: usize) -> Vec<SplitRange> {
        vec![
            SplitRange {
                name: "train".into(),
                start: 0,
                len: train,
            },
            SplitRange {
                name: "val".into(),
                start: train,
                len: val,
            },
            SplitRange {
                name: "test".into(),
                start: train + val,
                len: test,
            },
        ]
    }

    pub fn classification(train: usize, val: usize, test: usize) -> Self {
        Self {
            task: Task::Classification,
            splits: Self::sizes(train, val, test),
            frames: 16,
            height: 32,
            width: 32,
            channels: 3,
            classes: 4,
            ef_range: (10.0, 90.0),
            shape_size: 8.0,
            speed: 1.0,
            radius_range: (9.0, 12.0),
            background_level: 0.15,
            foreground_level: 0.85,
            noise_amp: 0.02,
            seed: SeedSpec::new(0, "dataset"),
        }
    }

    pub fn regression(train: usize, val: usize, test: usize) -> Self {
        Self {
            task: Task::Regression,
            channels: 1,
            ..Self::classification(train, val, test)
        }
    }

    pub fn dims(&self) -> Dims4 {
        Dims4::new(self.frames, self.height, self.width, self.channels)
    }

    pub fn split(&self, name: &str) -> Result<&SplitRange> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("no split named `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        if !(0.0..0.5).contains(&self.noise_amp) {
            return Err(Error::Config(format!(
                "noise_amp {} outside [0, 0.5)",
                self.noise_amp
            )));
        }
        for lvl in [self.background_level, self.foreground_level] {
            if !(0.0..=1.0).contains(&lvl) {
                return Err(Error::Config(format!(
                    "intensity level {lvl} outside [0,1]"
                )));
            }
        }
        let mut ranges: Vec<&SplitRange> = self.splits.iter().collect();
        ranges.sort_by_key(|s| s.start);
        for w in ranges.windows(2) {
            if w[0].start + w[0].len > w[1].start {
                return Err(Error::Config(format!(
                    "splits `{}` and `{}` overlap",
                    w[0].name, w[1].name
                )));
            }
        }
        for (i, a) in self.splits.iter().enumerate() {
            if self.splits[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Config(format!("duplicate split name `{}`", a.name)));
            }
        }
        match self.task {
            Task::Classification => {
                if self.channels != 3 && self.channels != 1 {
                    return Err(Error::Config("channels must be 1 or 3".into()));
                }
                if !(2..=DIRECTIONS.len()).contains(&self.classes) {
                    return Err(Error::Config(format!(
                        "classes must be in 2..={}, got {}",
                        DIRECTIONS.len(),
                        self.classes
                    )));
                }
                if !(self.speed > 0.0) {
                    return Err(Error::Config(
                        "speed must be positive, otherwise classes are indistinguishable".into(),
                    ));
                }
                if !(self.shape_size >= 1.0) {
                    return Err(Error::Config("shape_size must be at least 1 pixel".into()));
                }
                let travel = self.shape_size + (self.frames - 1) as f32 * self.speed;
                if travel > self.height.min(self.width) as f32 {
                    return Err(Error::Config(format!(
                        "shape of size {} moving {} px/frame for {} frames leaves the {}x{} frame",
                        self.shape_size, self.speed, self.frames, self.height, self.width
                    )));
                }
            }
            Task::Regression => {
                let (lo, hi) = self.ef_range;
                if !(0.0 <= lo && lo <= hi && hi < 100.0) {
                    return Err(Error::Config(format!(
                        "ef range ({lo}, {hi}) not inside [0,100)"
                    )));
                }
                let (rlo, rhi) = self.radius_range;
                if !(rlo > 0.0 && rlo <= rhi) {
                    return Err(Error::Config(format!("bad radius range ({rlo}, {rhi})")));
                }
                if 2.0 * (rhi + 1.0) > self.height.min(self.width) as f32 {
                    return Err(Error::Config(format!(
                        "radius {rhi} does not fit in {}x{}",
                        self.height, self.width
                    )));
                }
                let r_min = rlo * (1.0 - hi / 100.0).sqrt();
                if r_min < 1.0 {
                    return Err(Error::Config(format!(
                        "smallest radius {r_min:.3} px is below 1 pixel"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_index(&self, index: usize) -> Result<()> {
        let end = self
            .splits
            .iter()
            .map(|s| s.start + s.len)
            .max()
            .unwrap_or(0);
        if index >= end {
            return Err(Error::Config(format!(
                "sample index {index} beyond configured splits ({end})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovingShapeSample {
    pub video: VideoTensor,
    pub label: usize,
    /// Top-left corner `(y, x)` of the square in each frame.
    pub positions: Vec<(f32, f32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSample {
    pub video: VideoTensor,
    pub ef: f32,
    pub center: (f32, f32),
    pub radii: Vec<f32>,
}

/// Overlap length of `[a0, a1)` with `[b0, b1)`.
fn overlap(a0: f32, a1: f32, b0: f32, b1: f32) -> f32 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn noise_and_clamp(v: f32, amp: f32, rng: &mut impl Rng) -> f32 {
    let n = if amp > 0.0 {
        rng.gen_range(-amp..=amp)
    } else {
        0.0
    };
    (v + n).clamp(0.0, 1.0)
}

pub fn gen_moving_shape(config: &DatasetConfig, index: usize) -> Result<MovingShapeSample> {
    if config.task != Task::Classification {
        return Err(Error::Config(
            "gen_moving_shape needs a classification config".into(),
        ));
    }
    config.validate()?;
    config.check_index(index)?;
    let mut rng = config.seed.derive(format_args!("sample/{index}")).rng();
    let label = rng.gen_range(0..config.classes);
    let (dy, dx) = DIRECTIONS[label];
    let s = config.shape_size;
    let travel = (config.frames - 1) as f32 * config.speed;
    let start = |extent: usize, dir: i32, rng: &mut crate::rng::StreamRng| -> f32 {
        let free = extent as f32 - s;
        let (lo, hi) = match dir {
            1 => (0.0, free - travel),
            -1 => (travel, free),
            _ => (0.0, free),
        };
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    };
    let y0 = start(config.height, dy, &mut rng);
    let x0 = start(config.width, dx, &mut rng);
    let color: Vec<f32> = (0..config.channels)
        .map(|_| {
            rng.gen_range(config.foreground_level - 0.25..=config.foreground_level)
                .clamp(0.0, 1.0)
        })
        .collect();
    let bg = config.background_level;
    let d = config.dims();
    let mut data = vec![0.0f32; d.len()];
    let mut positions = Vec::with_capacity(d.frames);
    for f in 0..d.frames {
        let py = y0 + dy as f32 * config.speed * f as f32;
        let px = x0 + dx as f32 * config.speed * f as f32;
        positions.push((py, px));
        for y in 0..d.height {
            let cy = overlap(y as f32, y as f32 + 1.0, py, py + s);
            for x in 0..d.width {
                let cov = cy * overlap(x as f32, x as f32 + 1.0, px, px + s);
                for c in 0..d.channels {
                    let v = bg * (1.0 - cov) + color[c] * cov;
                    data[d.index(f, y, x, c)] = noise_and_clamp(v, config.noise_amp, &mut rng);
                }
            }
        }
    }
    Ok(MovingShapeSample {
        video: VideoTensor::new(d, data)?,
        label,
        positions,
    })
}

/// Disc radius at frame `t` so that `A(t)/A_max = 1 - (ef/100)(1 - cos(2 pi t / F))/2`.
pub fn pulse_radius(r_max: f32, ef: f32, t: usize, frames: usize) -> f32 {
    let phase = 2.0 * std::f64::consts::PI * t as f64 / frames as f64;
    let frac = 1.0 - (ef as f64 / 100.0) * (1.0 - phase.cos()) / 2.0;
    (r_max as f64 * frac.sqrt()) as f32
}

/// Anti-aliased coverage of a disc over an `h x w` pixel grid. Pixels that
/// straddle the boundary are supersampled 16x16.
pub fn disc_coverage(h: usize, w: usize, cy: f32, cx: f32, r: f32) -> Vec<f32> {
    const SS: usize = 16;
    let mut out = vec![0.0f32; h * w];
    let half_diag = std::f32::consts::FRAC_1_SQRT_2;
    for y in 0..h {
        for x in 0..w {
            let dy = y as f32 + 0.5 - cy;
            let dx = x as f32 + 0.5 - cx;
            let dist = (dy * dy + dx * dx).sqrt();
            out[y * w + x] = if dist + half_diag <= r {
                1.0
            } else if dist - half_diag >= r {
                0.0
            } else {
                let mut inside = 0usize;
                for sy in 0..SS {
                    for sx in 0..SS {
                        let py = y as f32 + (sy as f32 + 0.5) / SS as f32 - cy;
                        let px = x as f32 + (sx as f32 + 0.5) / SS as f32 - cx;
                        if py * py + px * px <= r * r {
                            inside += 1;
                        }
                    }
                }
                inside as f32 / (SS * SS) as f32
            };
        }
    }
    out
}

pub fn gen_pulse(config: &DatasetConfig, index: usize) -> Result<PulseSample> {
    if config.task != Task::Regression {
        return Err(Error::Config("gen_pulse needs a regression config".into()));
    }
    config.validate()?;
    config.check_index(index)?;
    let mut rng = config.seed.derive(format_args!("sample/{index}")).rng();
    let (lo, hi) = config.ef_range;
    let ef = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let (rlo, rhi) = config.radius_range;
    let r_max = if rhi > rlo {
        rng.gen_range(rlo..=rhi)
    } else {
        rlo
    };
    let margin = r_max + 1.0;
    let cy = rng.gen_range(margin..=config.height as f32 - margin);
    let cx = rng.gen_range(margin..=config.width as f32 - margin);
    let d = config.dims();
    let (bg, fg) = (config.background_level, config.foreground_level);
    let mut data = vec![0.0f32; d.len()];
    let mut radii = Vec::with_capacity(d.frames);
    for f in 0..d.frames {
        let r = pulse_radius(r_max, ef, f, d.frames);
        radii.push(r);
        let cov = disc_coverage(d.height, d.width, cy, cx, r);
        for (p, &a) in cov.iter().enumerate() {
            for c in 0..d.channels {
                let v = bg * (1.0 - a) + fg * a;
                data[(f * d.pixels_per_frame() + p) * d.channels + c] =
                    noise_and_clamp(v, config.noise_amp, &mut rng);
            }
        }
    }
    Ok(PulseSample {
        video: VideoTensor::new(d, data)?,
        ef,
        center: (cy, cx),
        radii,
    })
}

/// Generates the sample at a global index for whichever task the config names.
pub fn gen_sample(config: &DatasetConfig, index: usize) -> Result<(VideoTensor, Label)> {
    match config.task {
        Task::Classification => {
            let s = gen_moving_shape(config, index)?;
            Ok((s.video, Label::Class(s.label)))
        }
        Task::Regression => {
            let s = gen_pulse(config, index)?;
            Ok((s.video, Label::Value(s.ef)))
        }
    }
}

/// One materialised split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub task: Task,
    pub indices: Vec<usize>,
    pub videos: Vec<VideoTensor>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn dims(&self) -> Option<Dims4> {
        self.videos.first().map(|v| v.dims())
    }

    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            split: self.split.clone(),
            task: self.task,
            indices: self.indices[..n].to_vec(),
            videos: self.videos[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

pub fn make_split(config: &DatasetConfig, name: &str) -> Result<Dataset> {
    config.validate()?;
    let range = config.split(name)?;
    let mut ds = Dataset {
        split: name.to_owned(),
        task: config.task,
        indices: Vec::with_capacity(range.len),
        videos: Vec::with_capacity(range.len),
        labels: Vec::with_capacity(range.len),
    };
    for i in range.start..range.start + range.len {
        let (v, l) = gen_sample(config, i)?;
        ds.indices.push(i);
        ds.videos.push(v);
        ds.labels.push(l);
    }
    Ok(ds)
}

/// All configured splits, in config order.
pub fn make_splits(config: &DatasetConfig) -> Result<Vec<Dataset>> {
    config.validate()?;
    config
        .splits
        .iter()
        .map(|s| make_split(config, &s.name))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSidecar {
    pub split: String,
    pub task: Task,
    pub labels: BTreeMap<usize, Label>,
    pub config: DatasetConfig,
}

/// Writes `<dir>/<split>.ldvt` (entries `videos` `[N,F,H,W,C]` and `labels`
/// `[N]`) plus `<dir>/<split>.json`.
pub fn save_split(dir: impl AsRef<Path>, ds: &Dataset, config: &DatasetConfig) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = ds
        .dims()
        .ok_or_else(|| Error::EmptyInput(format!("split `{}` is empty", ds.split)))?;
    let mut shape = vec![ds.len()];
    shape.extend(d.to_shape());
    let mut flat = Vec::with_capacity(ds.len() * d.len());
    for v in &ds.videos {
        flat.extend_from_slice(v.data());
    }
    let mut a = TensorArchive::new();
    a.insert_f32("videos", shape, flat)?;
    a.insert_f32(
        "labels",
        vec![ds.len()],
        ds.labels.iter().map(Label::as_f32).collect(),
    )?;
    archive_save(&a, dir.join(format!("{}.ldvt", ds.split)))?;
    let sidecar = SplitSidecar {
        split: ds.split.clone(),
        task: ds.task,
        labels: ds
            .indices
            .iter()
            .copied()
            .zip(ds.labels.iter().copied())
            .collect(),
        config: config.clone(),
    };
    let path = dir.join(format!("{}.json", ds.split));
    std::fs::write(&path, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
}

pub fn load_split(dir: impl AsRef<Path>, split: &str) -> Result<(Dataset, DatasetConfig)> {
    let dir = dir.as_ref();
    let json_path = dir.join(format!("{split}.json"));
    let bytes = std::fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: SplitSidecar = serde_json::from_slice(&bytes)?;
    let a = archive_load(dir.join(format!("{split}.ldvt")))?;
    let videos = a.tensor("videos")?;
    let shape = videos.shape().to_vec();
    if shape.len() != 5 || shape[0] != sidecar.labels.len() {
        return Err(Error::CorruptArchive(format!(
            "videos entry has shape {shape:?} for {} labels",
            sidecar.labels.len()
        )));
    }
    let d = Dims4::from_shape(&shape[1..])?;
    let videos = videos
        .data()
        .chunks_exact(d.len())
        .map(|c| VideoTensor::new(d, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let (indices, labels) = sidecar.labels.into_iter().unzip();
    Ok((
        Dataset {
            split: sidecar.split,
            task: sidecar.task,
            indices,
            videos,
            labels,
        },
        sidecar.config,
    ))
}
