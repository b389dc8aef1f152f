//! Dense float tensors and the two video-shaped views used throughout the
//! pipeline: pixel-space [`VideoTensor`] and latent-space [`LatentTensor`].
//!
//! Both use row-major `(frames, height, width, channels)` layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extent of a 4-D video-like tensor, `(F, H, W, C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims4 {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims4 {
    pub const fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn to_shape(&self) -> Vec<usize> {
        vec![self.frames, self.height, self.width, self.channels]
    }

    pub fn from_shape(shape: &[usize]) -> Result<Self> {
        match shape {
            [f, h, w, c] => {
                let d = Self::new(*f, *h, *w, *c);
                d.validate()?;
                Ok(d)
            }
            _ => Err(Error::InvalidShape(format!(
                "expected 4 dims (F,H,W,C), got {shape:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::InvalidShape(format!(
                "zero-size dimension in {self:?}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, f: usize, y: usize, x: usize, c: usize) -> usize {
        ((f * self.height + y) * self.width + x) * self.channels + c
    }
}

impl std::fmt::Display for Dims4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.height, self.width, self.channels
        )
    }
}

/// Unconstrained float32 tensor with an arbitrary shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() {
            return Err(Error::InvalidShape("empty shape".into()));
        }
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims4(&self) -> Result<Dims4> {
        Dims4::from_shape(&self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f32 {
        l2_norm(&self.data)
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f32 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt() as f32
}

/// Pixel-space video; every value lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    dims: Dims4,
    data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(dims: Dims4, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if dims.len() != data.len() {
            return Err(Error::InvalidShape(format!(
                "video {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::Range(format!(
                "video value {v} at flat index {i} is outside [0,1]"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims4) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            data: vec![0.0; dims.len()],
        })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let dims = t.dims4()?;
        Self::new(dims, t.into_data())
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: self.dims.to_shape(),
            data: self.data.clone(),
        }
    }

    pub fn into_tensor(self) -> Tensor {
        Tensor {
            shape: self.dims.to_shape(),
            data: self.data,
        }
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.data[f * n..(f + 1) * n]
    }
}

/// Latent-space tensor `(F, h, w, c_lat)`; every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    dims: Dims4,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn new(dims: Dims4, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if dims.len() != data.len() {
            return Err(Error::InvalidShape(format!(
                "latent {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("latent contains NaN or Inf".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims4) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            data: vec![0.0; dims.len()],
        })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let dims = t.dims4()?;
        Self::new(dims, t.into_data())
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: self.dims.to_shape(),
            data: self.data.clone(),
        }
    }

    pub fn into_tensor(self) -> Tensor {
        Tensor {
            shape: self.dims.to_shape(),
            data: self.data,
        }
    }

    pub fn check_same_dims(&self, other: &LatentTensor, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// `a * self + b * other`, elementwise. Fails on non-finite results.
    pub fn affine_combine(&self, a: f32, other: &LatentTensor, b: f32) -> Result<LatentTensor> {
        self.check_same_dims(other, "affine combination")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        LatentTensor::new(self.dims, data)
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_rejects_out_of_range_and_nan() {
        let d = Dims4::new(1, 1, 2, 1);
        assert!(VideoTensor::new(d, vec![0.0, 1.0]).is_ok());
        assert!(matches!(
            VideoTensor::new(d, vec![0.0, 1.0001]),
            Err(Error::Range(_))
        ));
        assert!(VideoTensor::new(d, vec![f32::NAN, 0.5]).is_err());
        assert!(VideoTensor::new(d, vec![-0.1, 0.5]).is_err());
        assert!(VideoTensor::new(d, vec![0.5]).is_err());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(Dims4::new(0, 1, 1, 1).validate().is_err());
        assert!(VideoTensor::zeros(Dims4::new(1, 0, 1, 1)).is_err());
    }

    #[test]
    fn latent_rejects_non_finite() {
        let d = Dims4::new(1, 1, 1, 2);
        assert!(LatentTensor::new(d, vec![1e30, -3.0]).is_ok());
        assert!(LatentTensor::new(d, vec![f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn index_is_row_major() {
        let d = Dims4::new(2, 3, 4, 5);
        assert_eq!(d.index(0, 0, 0, 1), 1);
        assert_eq!(d.index(0, 0, 1, 0), 5);
        assert_eq!(d.index(0, 1, 0, 0), 20);
        assert_eq!(d.index(1, 0, 0, 0), 60);
        assert_eq!(d.index(1, 2, 3, 4), d.len() - 1);
    }
}
