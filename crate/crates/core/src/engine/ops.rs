//! Pooling, upsampling, normalization, activation and dropout, each with its
//! backward pass.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{bernoulli_threshold, RngState};

/// Output of [`maxpool2`]: pooled values plus the flat input index that won
/// each window.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<u32>,
}

/// Non-overlapping 2x2 max pooling. Ties go to the first element of the
/// window in row-major order.
pub fn maxpool2(input: &Tensor) -> Result<Pooled> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2 needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let window = [top, top + 1, top + w, top + w + 1];
                let mut best = window[0];
                for &idx in &window[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(&[n, c, oh, ow], out)?,
        argmax,
    })
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("maxpool2_backward: argmax/gradient length mismatch"));
    }
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    for (&idx, &go) in argmax.iter().zip(grad_out.data()) {
        g[idx as usize] += go;
    }
    Ok(gx)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let row = &src[(oy / 2) * w..(oy / 2 + 1) * w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = row[ox / 2];
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Adjoint of [`upsample_nearest2`]: sums each 2x2 block.
pub fn upsample_nearest2_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, oh, ow) = grad_out.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::shape("upsample gradient must have even extents"));
    }
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.data();
    let mut gx = vec![0.0f32; n * c * h * w];
    for plane in 0..n * c {
        let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let t = 2 * y * ow + 2 * x;
                dst[y * w + x] = src[t] + src[t + 1] + src[t + ow] + src[t + ow + 1];
            }
        }
    }
    Tensor::new(&[n, c, h, w], gx)
}

/// Saved state for the batch-norm backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f32>,
}

/// Per-channel batch statistics (biased variance) from a train-mode pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    /// Number of values each statistic was computed over.
    pub count: usize,
}

fn check_affine(c: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "batchnorm: {c} channels but gamma/beta have {}/{}",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Batch normalization with statistics of the current batch.
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<(Tensor, BatchNormCache, BatchStats)> {
    let (n, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    let plane = h * w;
    let count = n * plane;
    if count < 2 {
        return Err(Error::invalid(
            "batchnorm in train mode needs at least two values per channel",
        ));
    }
    let x = input.data();
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            s += x[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = s / count as f64;
        let mut ss = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            ss += x[off..off + plane]
                .iter()
                .map(|&v| (v as f64 - m).powi(2))
                .sum::<f64>();
        }
        mean[ch] = m as f32;
        var[ch] = (ss / count as f64) as f32;
    }
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (m, is, g, be) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + plane {
                let xh = (x[i] - m) * is;
                xhat[i] = xh;
                out[i] = g * xh + be;
            }
        }
    }
    let out = Tensor::new(input.shape(), out)?;
    out.check_finite("batchnorm output")?;
    Ok((
        out,
        BatchNormCache {
            normalized: Tensor::new(input.shape(), xhat)?,
            inv_std,
        },
        BatchStats { mean, var, count },
    ))
}

/// Batch normalization with fixed (running) statistics.
pub fn batchnorm_eval(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape("batchnorm: running statistics length mismatch"));
    }
    let plane = h * w;
    let mut out = input.clone();
    let o = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma.data()[ch] / (var[ch] + eps).sqrt();
            let shift = beta.data()[ch] - mean[ch] * scale;
            let off = (b * c + ch) * plane;
            for v in &mut o[off..off + plane] {
                *v = *v * scale + shift;
            }
        }
    }
    out.check_finite("batchnorm output")?;
    Ok(out)
}

/// Gradients of train-mode batch normalization.
#[derive(Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    let (n, c, h, w) = grad_out.dims4()?;
    if cache.normalized.shape() != grad_out.shape() {
        return Err(Error::shape("batchnorm_backward: cache/gradient shape mismatch"));
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let gy = grad_out.data();
    let xh = cache.normalized.data();
    let mut ggamma = vec![0.0f32; c];
    let mut gbeta = vec![0.0f32; c];
    let mut gx = vec![0.0f32; gy.len()];
    for ch in 0..c {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                sg += gy[i] as f64;
                sgx += gy[i] as f64 * xh[i] as f64;
            }
        }
        gbeta[ch] = sg as f32;
        ggamma[ch] = sgx as f32;
        let k = gamma.data()[ch] as f64 * cache.inv_std[ch] as f64 / count;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                gx[i] = (k * (count * gy[i] as f64 - sg - xh[i] as f64 * sgx)) as f32;
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape(), gx)?,
        gamma: Tensor::new(&[c], ggamma)?,
        beta: Tensor::new(&[c], gbeta)?,
    })
}

pub fn leaky_relu(input: &Tensor, slope: f32) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v *= slope;
        }
    }
    out
}

/// Uses the pre-activation `input`; the derivative at exactly zero is `slope`.
pub fn leaky_relu_backward(input: &Tensor, grad_out: &Tensor, slope: f32) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv *= slope;
        }
    }
    g
}

/// Per-element multipliers of an active dropout pass: 0 for dropped
/// elements, `1 / (1 - p)` for kept ones.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub scale: Vec<f32>,
}

impl DropoutMask {
    pub fn apply(&self, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for (v, &s) in g.data_mut().iter_mut().zip(&self.scale) {
            *v *= s;
        }
        g
    }
}

/// Inverted dropout. Returns the mask when `active` so the backward pass can
/// reuse it.
pub fn dropout(
    input: &Tensor,
    p: f32,
    rng: &mut RngState,
    active: bool,
) -> Result<(Tensor, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {p}")));
    }
    if !active {
        return Ok((input.clone(), None));
    }
    let threshold = bernoulli_threshold(p as f64);
    let keep_scale = 1.0 / (1.0 - p);
    let scale: Vec<f32> = (0..input.len())
        .map(|_| {
            if (rng.next_u32() as u64) < threshold {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let mask = DropoutMask { scale };
    Ok((mask.apply(input), Some(mask)))
}
