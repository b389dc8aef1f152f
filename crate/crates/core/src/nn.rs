//! Minimal hand-differentiated layers for the toy codec, denoiser and target
//! networks. Every layer exposes a forward pass plus explicit vector-Jacobian
//! products for its input and its parameters.
//!
//! Tensors are flat `f32` slices in `(F, H, W, C)` layout described by
//! [`Dims4`].

use rand_distr::{Distribution, Normal};

use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::rng::SeedSpec;
use crate::tensor::Dims4;

/// Flat view over all trainable tensors of a model.
///
/// `named` and `slots_mut` must enumerate tensors in the same order.
pub trait Parameterized {
    fn named(&self) -> Vec<(String, Vec<usize>, &[f32])>;
    fn slots_mut(&mut self) -> Vec<&mut [f32]>;
}

pub fn zero_grad<P: Parameterized>(p: &mut P) {
    for s in p.slots_mut() {
        s.fill(0.0);
    }
}

/// `acc += other`, tensor by tensor.
pub fn accumulate<P: Parameterized>(acc: &mut P, other: &P) {
    let src: Vec<Vec<f32>> = other
        .named()
        .into_iter()
        .map(|(_, _, d)| d.to_vec())
        .collect();
    for (dst, src) in acc.slots_mut().into_iter().zip(src) {
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
}

pub fn scale_params<P: Parameterized>(p: &mut P, s: f32) {
    for slot in p.slots_mut() {
        for v in slot.iter_mut() {
            *v *= s;
        }
    }
}

pub fn all_finite<P: Parameterized>(p: &P) -> bool {
    p.named()
        .iter()
        .all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
}

pub fn param_count<P: Parameterized>(p: &P) -> usize {
    p.named().iter().map(|(_, _, d)| d.len()).sum()
}

pub fn params_to_archive<P: Parameterized>(p: &P) -> Result<TensorArchive> {
    let mut a = TensorArchive::new();
    for (name, shape, data) in p.named() {
        a.insert_f32(&name, shape, data.to_vec())?;
    }
    Ok(a)
}

/// Overwrites `p` from an archive written by [`params_to_archive`].
pub fn params_from_archive<P: Parameterized>(p: &mut P, a: &TensorArchive) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> =
        p.named().into_iter().map(|(n, s, _)| (n, s)).collect();
    let mut sources = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let t = a.require(name)?;
        if &t.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "parameter `{name}`: checkpoint {:?}, model {:?}",
                t.shape, shape
            )));
        }
        let data = t
            .as_f32()
            .ok_or_else(|| Error::Version(format!("parameter `{name}` is not float32")))?;
        sources.push(data.to_vec());
    }
    for (slot, src) in p.slots_mut().into_iter().zip(sources) {
        slot.copy_from_slice(&src);
    }
    Ok(())
}

fn init_normal(seed: &SeedSpec, n: usize, std: f32) -> Vec<f32> {
    let mut rng = seed.rng();
    let dist = Normal::new(0.0f32, std).expect("finite std");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Convolution over `(F, H, W, C)` with a `(kt, k, k)` kernel, temporal
/// stride 1, spatial stride `stride` and "same" zero padding
/// (`kt/2` frames, `k/2` pixels). `kt = 1` is a per-frame 2-D convolution.
///
/// Weight layout: `[kt][k][k][in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub kt: usize,
    pub k: usize,
    pub stride: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv {
    pub fn new(
        kt: usize,
        k: usize,
        stride: usize,
        in_c: usize,
        out_c: usize,
        seed: &SeedSpec,
    ) -> Self {
        let fan_in = kt * k * k * in_c;
        let std = (1.0 / fan_in as f32).sqrt();
        Self {
            kt,
            k,
            stride,
            in_c,
            out_c,
            weight: init_normal(seed, kt * k * k * in_c * out_c, std),
            bias: vec![0.0; out_c],
        }
    }

    pub fn out_dims(&self, d: Dims4) -> Dims4 {
        let p = self.k / 2;
        let oh = (d.height + 2 * p - self.k) / self.stride + 1;
        let ow = (d.width + 2 * p - self.k) / self.stride + 1;
        Dims4::new(d.frames, oh, ow, self.out_c)
    }

    fn check_input(&self, d: Dims4, len: usize) -> Result<()> {
        if d.channels != self.in_c || d.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got dims {d} with {len} values",
                self.in_c
            )));
        }
        Ok(())
    }

    /// Calls `visit(out_index, in_index, weight_offset)` for every valid tap.
    #[inline]
    fn for_each_tap(&self, d: Dims4, od: Dims4, mut visit: impl FnMut(usize, usize, usize)) {
        let (pt, p) = ((self.kt / 2) as isize, (self.k / 2) as isize);
        let tap = self.in_c * self.out_c;
        for f in 0..od.frames {
            for oy in 0..od.height {
                for ox in 0..od.width {
                    let oi = od.index(f, oy, ox, 0);
                    for dt in 0..self.kt {
                        let fi = f as isize + dt as isize - pt;
                        if fi < 0 || fi >= d.frames as isize {
                            continue;
                        }
                        for ky in 0..self.k {
                            let iy = (oy * self.stride) as isize + ky as isize - p;
                            if iy < 0 || iy >= d.height as isize {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ix = (ox * self.stride) as isize + kx as isize - p;
                                if ix < 0 || ix >= d.width as isize {
                                    continue;
                                }
                                let ii = d.index(fi as usize, iy as usize, ix as usize, 0);
                                let wo = ((dt * self.k + ky) * self.k + kx) * tap;
                                visit(oi, ii, wo);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[f32], d: Dims4) -> Result<(Vec<f32>, Dims4)> {
        self.check_input(d, x.len())?;
        let od = self.out_dims(d);
        let mut y = vec![0.0f32; od.len()];
        for o in y.chunks_exact_mut(self.out_c) {
            o.copy_from_slice(&self.bias);
        }
        let (ic, oc) = (self.in_c, self.out_c);
        let w = &self.weight;
        self.for_each_tap(d, od, |oi, ii, wo| {
            let out = &mut y[oi..oi + oc];
            let xin = &x[ii..ii + ic];
            for (ci, &xv) in xin.iter().enumerate() {
                let wrow = &w[wo + ci * oc..wo + (ci + 1) * oc];
                for (o, &wv) in out.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        });
        Ok((y, od))
    }

    /// Input cotangent from output cotangent `dy`.
    pub fn backward_input(&self, dy: &[f32], d: Dims4) -> Vec<f32> {
        let od = self.out_dims(d);
        debug_assert_eq!(dy.len(), od.len());
        let mut dx = vec![0.0f32; d.len()];
        let (ic, oc) = (self.in_c, self.out_c);
        let w = &self.weight;
        self.for_each_tap(d, od, |oi, ii, wo| {
            let g = &dy[oi..oi + oc];
            let dxin = &mut dx[ii..ii + ic];
            for (ci, dxv) in dxin.iter_mut().enumerate() {
                let wrow = &w[wo + ci * oc..wo + (ci + 1) * oc];
                let mut s = 0.0f32;
                for (&wv, &gv) in wrow.iter().zip(g) {
                    s += wv * gv;
                }
                *dxv += s;
            }
        });
        dx
    }

    /// Accumulates parameter gradients into `grad` (same architecture).
    pub fn backward_params(&self, x: &[f32], d: Dims4, dy: &[f32], grad: &mut Conv) {
        let od = self.out_dims(d);
        debug_assert_eq!(dy.len(), od.len());
        let (ic, oc) = (self.in_c, self.out_c);
        for g in dy.chunks_exact(oc) {
            for (b, &gv) in grad.bias.iter_mut().zip(g) {
                *b += gv;
            }
        }
        let gw = &mut grad.weight;
        self.for_each_tap(d, od, |oi, ii, wo| {
            let g = &dy[oi..oi + oc];
            let xin = &x[ii..ii + ic];
            for (ci, &xv) in xin.iter().enumerate() {
                let grow = &mut gw[wo + ci * oc..wo + (ci + 1) * oc];
                for (gwv, &gv) in grow.iter_mut().zip(g) {
                    *gwv += xv * gv;
                }
            }
        });
    }

    pub fn named_into<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f32])>) {
        out.push((
            format!("{prefix}.weight"),
            vec![self.kt, self.k, self.k, self.in_c, self.out_c],
            &self.weight,
        ));
        out.push((format!("{prefix}.bias"), vec![self.out_c], &self.bias));
    }

    pub fn slots_into<'a>(&'a mut self, out: &mut Vec<&'a mut [f32]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Fully connected layer, weight layout `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, seed: &SeedSpec) -> Self {
        let std = (1.0 / in_dim as f32).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: init_normal(seed, in_dim * out_dim, std),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>())
            .collect()
    }

    pub fn backward_input(&self, dy: &[f32]) -> Vec<f32> {
        let mut dx = vec![0.0f32; self.in_dim];
        for (row, &g) in self.weight.chunks_exact(self.in_dim).zip(dy) {
            for (d, &w) in dx.iter_mut().zip(row) {
                *d += w * g;
            }
        }
        dx
    }

    pub fn backward_params(&self, x: &[f32], dy: &[f32], grad: &mut Dense) {
        for ((row, b), &g) in grad
            .weight
            .chunks_exact_mut(self.in_dim)
            .zip(grad.bias.iter_mut())
            .zip(dy)
        {
            *b += g;
            for (w, &v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
    }

    pub fn named_into<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f32])>) {
        out.push((
            format!("{prefix}.weight"),
            vec![self.out_dim, self.in_dim],
            &self.weight,
        ));
        out.push((format!("{prefix}.bias"), vec![self.out_dim], &self.bias));
    }

    pub fn slots_into<'a>(&'a mut self, out: &mut Vec<&'a mut [f32]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

pub fn tanh_inplace(x: &mut [f32]) {
    for v in x.iter_mut() {
        *v = v.tanh();
    }
}

/// `dy * (1 - y^2)` where `y = tanh(x)` was the forward output.
pub fn tanh_backward(y: &[f32], dy: &[f32]) -> Vec<f32> {
    y.iter().zip(dy).map(|(&y, &g)| g * (1.0 - y * y)).collect()
}

/// `ln(1 + e^x)`, computed without overflow.
pub fn softplus_inplace(x: &mut [f32]) {
    for v in x.iter_mut() {
        *v = v.max(0.0) + (-v.abs()).exp().ln_1p();
    }
}

/// `dy * sigmoid(x)`, recovered from the output as `1 - e^{-y}`.
pub fn softplus_backward(y: &[f32], dy: &[f32]) -> Vec<f32> {
    y.iter()
        .zip(dy)
        .map(|(&y, &g)| g * -(-y).exp_m1())
        .collect()
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `dy * y * (1 - y)` where `y = sigmoid(x)`.
pub fn sigmoid_backward(y: &[f32], dy: &[f32]) -> Vec<f32> {
    y.iter().zip(dy).map(|(&y, &g)| g * y * (1.0 - y)).collect()
}

/// Nearest-neighbour 2x spatial upsampling.
pub fn upsample2(x: &[f32], d: Dims4) -> (Vec<f32>, Dims4) {
    let od = Dims4::new(d.frames, d.height * 2, d.width * 2, d.channels);
    let mut y = vec![0.0f32; od.len()];
    let c = d.channels;
    for f in 0..d.frames {
        for oy in 0..od.height {
            for ox in 0..od.width {
                let src = d.index(f, oy / 2, ox / 2, 0);
                let dst = od.index(f, oy, ox, 0);
                y[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    (y, od)
}

/// Adjoint of [`upsample2`]: sums each 2x2 block back into one cell.
pub fn upsample2_backward(dy: &[f32], d: Dims4) -> Vec<f32> {
    let od = Dims4::new(d.frames, d.height * 2, d.width * 2, d.channels);
    let mut dx = vec![0.0f32; d.len()];
    let c = d.channels;
    for f in 0..d.frames {
        for oy in 0..od.height {
            for ox in 0..od.width {
                let src = od.index(f, oy, ox, 0);
                let dst = d.index(f, oy / 2, ox / 2, 0);
                for k in 0..c {
                    dx[dst + k] += dy[src + k];
                }
            }
        }
    }
    dx
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) {
        let grads: Vec<&[f32]> = grads.named().into_iter().map(|(_, _, d)| d).collect();
        let slots = params.slots_mut();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in slots
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
