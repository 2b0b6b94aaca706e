//! 2-D cross-correlation, stride 1, zero padding, square kernels.

use super::tensor::Tensor;
use crate::error::{Error, Result};

struct ConvGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, weight: &Tensor, padding: usize) -> Result<Self> {
        let (n, cin, h, w) = input.dims4()?;
        let (cout, wcin, kh, kw) = weight.dims4()?;
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!("conv2d: non-square kernel {kh}x{kw}")));
        }
        let k = kh;
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::shape(format!(
                "conv2d: kernel {k} larger than padded input {h}x{w}"
            )));
        }
        Ok(ConvGeometry {
            n,
            cin,
            h,
            w,
            cout,
            k,
            pad: padding,
            oh: h + 2 * padding - k + 1,
            ow: w + 2 * padding - k + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// True when the im2col matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let (k, pad, h, w, oh, ow) = (self.k, self.pad, self.h, self.w, self.oh, self.ow);
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad as isize;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = ox as isize + kx as isize - pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], gx: &mut [f32]) {
        let (k, pad, h, w, oh, ow) = (self.k, self.pad, self.h, self.w, self.oh, self.ow);
        for ci in 0..self.cin {
            let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = ox as isize + kx as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `C[m x n] = alpha * A * B + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
) {
    // SAFETY: callers pass slices covering the strided extents; the output is
    // a contiguous row-major m x n block.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input, weight, padding)?;
    if bias.len() != g.cout {
        return Err(Error::shape(format!(
            "conv2d: bias has {} entries for {} output channels",
            bias.len(),
            g.cout
        )));
    }
    let (plen, oplane) = (g.patch_len(), g.out_plane());
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![0.0f32; g.n * g.cout * oplane];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; plen * oplane]
    };
    for i in 0..g.n {
        let x = &input.data()[i * in_len..(i + 1) * in_len];
        let cols: &[f32] = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut col);
            &col
        };
        let o = &mut out[i * g.cout * oplane..(i + 1) * g.cout * oplane];
        for (co, chunk) in o.chunks_mut(oplane).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        gemm(
            g.cout,
            plen,
            oplane,
            weight.data(),
            plen,
            1,
            cols,
            oplane,
            1,
            1.0,
            o,
        );
    }
    let out = Tensor::new(&[g.n, g.cout, g.oh, g.ow], out)?;
    out.check_finite("conv2d output")?;
    Ok(out)
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    padding: usize,
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(input, weight, padding)?;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "conv2d_backward: gradient shape {:?} does not match output",
            grad_out.shape()
        )));
    }
    let (plen, oplane) = (g.patch_len(), g.out_plane());
    let in_len = g.cin * g.h * g.w;
    let mut gw = vec![0.0f32; g.cout * plen];
    let mut gb = vec![0.0f32; g.cout];
    let mut gx = vec![0.0f32; g.n * in_len];
    let mut col = vec![0.0f32; plen * oplane];
    let mut gcol = vec![0.0f32; plen * oplane];
    for i in 0..g.n {
        let x = &input.data()[i * in_len..(i + 1) * in_len];
        let go = &grad_out.data()[i * g.cout * oplane..(i + 1) * g.cout * oplane];
        for (co, chunk) in go.chunks(oplane).enumerate() {
            gb[co] += chunk.iter().map(|&v| v as f64).sum::<f64>() as f32;
        }
        let cols: &[f32] = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut col);
            &col
        };
        // dW += dY * col^T
        gemm(g.cout, oplane, plen, go, oplane, 1, cols, 1, oplane, 1.0, &mut gw);
        // dcol = W^T * dY
        let gxi = &mut gx[i * in_len..(i + 1) * in_len];
        if g.is_pointwise() {
            gemm(plen, g.cout, oplane, weight.data(), 1, plen, go, oplane, 1, 0.0, gxi);
        } else {
            gemm(plen, g.cout, oplane, weight.data(), 1, plen, go, oplane, 1, 0.0, &mut gcol);
            g.col2im(&gcol, gxi);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), gx)?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: Tensor::new(&[g.cout], gb)?,
    })
}
