//! Differentiable building blocks with explicit forward caches and
//! hand-written backward passes.
//!
//! Every `backward` takes an optional gradient container of the same type as
//! the layer. Passing `None` propagates gradients to the layer input while
//! leaving the layer's own parameters untouched, which is how a module is
//! detached from a loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{axpy, dot, Act, Matrix, Tensor};

fn normal_init<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

/// Square-kernel 2D convolution with zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[out, in, k, k]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

pub(crate) struct ConvCache {
    col: Vec<f64>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        Self {
            weight: normal_init(&[out_ch, in_ch, kernel, kernel], (2.0 / fan_in).sqrt(), rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    pub(crate) fn forward(&self, x: &Act) -> (Act, ConvCache) {
        let (cin, cout, k) = (self.in_channels(), self.out_channels(), self.kernel());
        debug_assert_eq!(x.c, cin);
        let (ho, wo) = self.output_hw(x.h, x.w);
        let p = ho * wo;
        let cols = x.n * p;
        let kk = cin * k * k;
        let mut col = vec![0.0; kk * cols];
        for b in 0..x.n {
            for ci in 0..cin {
                let plane = &x.data[(b * cin + ci) * x.h * x.w..][..x.h * x.w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let dst = &mut col[row * cols + b * p..][..p];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * x.w..][..x.w];
                            for ox in 0..wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < x.w as isize {
                                    dst[oy * wo + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; cout * cols];
        for o in 0..cout {
            let orow = &mut out[o * cols..(o + 1) * cols];
            let wrow = &self.weight.data[o * kk..(o + 1) * kk];
            for (r, &wv) in wrow.iter().enumerate() {
                if wv != 0.0 {
                    axpy(wv, &col[r * cols..(r + 1) * cols], orow);
                }
            }
        }
        let mut y = Act::zeros(x.n, cout, ho, wo);
        for b in 0..x.n {
            for o in 0..cout {
                let src = &out[o * cols + b * p..][..p];
                let bias = self.bias.data[o];
                let dst = &mut y.data[(b * cout + o) * p..][..p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
        (
            y,
            ConvCache {
                col,
                in_shape: (x.n, x.c, x.h, x.w),
                out_hw: (ho, wo),
            },
        )
    }

    /// Returns the input gradient when `want_input_grad` is set.
    pub(crate) fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &Act,
        grad: Option<&mut Conv2d>,
        want_input_grad: bool,
    ) -> Option<Act> {
        let (n, cin, h, w) = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let (cout, k) = (self.out_channels(), self.kernel());
        let p = ho * wo;
        let cols = n * p;
        let kk = cin * k * k;
        let mut g = vec![0.0; cout * cols];
        for b in 0..n {
            for o in 0..cout {
                g[o * cols + b * p..][..p].copy_from_slice(&grad_out.data[(b * cout + o) * p..][..p]);
            }
        }
        if let Some(gp) = grad {
            for o in 0..cout {
                let grow = &g[o * cols..(o + 1) * cols];
                gp.bias.data[o] += grow.iter().sum::<f64>();
                let wrow = &mut gp.weight.data[o * kk..(o + 1) * kk];
                for (r, gw) in wrow.iter_mut().enumerate() {
                    *gw += dot(grow, &cache.col[r * cols..(r + 1) * cols]);
                }
            }
        }
        if !want_input_grad {
            return None;
        }
        let mut dcol = vec![0.0; kk * cols];
        for o in 0..cout {
            let grow = &g[o * cols..(o + 1) * cols];
            let wrow = &self.weight.data[o * kk..(o + 1) * kk];
            for (r, &wv) in wrow.iter().enumerate() {
                if wv != 0.0 {
                    axpy(wv, grow, &mut dcol[r * cols..(r + 1) * cols]);
                }
            }
        }
        let mut dx = Act::zeros(n, cin, h, w);
        for b in 0..n {
            for ci in 0..cin {
                let plane = &mut dx.data[(b * cin + ci) * h * w..][..h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let src = &dcol[row * cols + b * p..][..p];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

/// 2×2, stride-2 transposed convolution (exact 2× upsampling).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    /// `[in, out, 2, 2]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self {
            weight: normal_init(&[in_ch, out_ch, 2, 2], (2.0 / in_ch as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub(crate) fn forward(&self, x: &Act) -> Act {
        let (cin, cout) = (self.weight.shape[0], self.weight.shape[1]);
        let (h, w) = (x.h, x.w);
        let mut y = Act::zeros(x.n, cout, 2 * h, 2 * w);
        let wo = 2 * w;
        for b in 0..x.n {
            for o in 0..cout {
                let dst = &mut y.data[(b * cout + o) * 4 * h * w..][..4 * h * w];
                dst.iter_mut().for_each(|v| *v = self.bias.data[o]);
                for c in 0..cin {
                    let src = &x.data[(b * cin + c) * h * w..][..h * w];
                    let kw = &self.weight.data[(c * cout + o) * 4..][..4];
                    for i in 0..h {
                        for j in 0..w {
                            let v = src[i * w + j];
                            dst[2 * i * wo + 2 * j] += v * kw[0];
                            dst[2 * i * wo + 2 * j + 1] += v * kw[1];
                            dst[(2 * i + 1) * wo + 2 * j] += v * kw[2];
                            dst[(2 * i + 1) * wo + 2 * j + 1] += v * kw[3];
                        }
                    }
                }
            }
        }
        y
    }

    pub(crate) fn backward(&self, x: &Act, grad_out: &Act, grad: Option<&mut ConvTranspose2d>) -> Act {
        let (cin, cout) = (self.weight.shape[0], self.weight.shape[1]);
        let (h, w) = (x.h, x.w);
        let wo = 2 * w;
        let mut dx = Act::zeros(x.n, cin, h, w);
        let mut grad = grad;
        for b in 0..x.n {
            for o in 0..cout {
                let g = &grad_out.data[(b * cout + o) * 4 * h * w..][..4 * h * w];
                if let Some(gp) = grad.as_deref_mut() {
                    gp.bias.data[o] += g.iter().sum::<f64>();
                }
                for c in 0..cin {
                    let src = &x.data[(b * cin + c) * h * w..][..h * w];
                    let kw = &self.weight.data[(c * cout + o) * 4..][..4];
                    let mut dk = [0.0; 4];
                    let dplane = &mut dx.data[(b * cin + c) * h * w..][..h * w];
                    for i in 0..h {
                        for j in 0..w {
                            let q = [
                                g[2 * i * wo + 2 * j],
                                g[2 * i * wo + 2 * j + 1],
                                g[(2 * i + 1) * wo + 2 * j],
                                g[(2 * i + 1) * wo + 2 * j + 1],
                            ];
                            let v = src[i * w + j];
                            for t in 0..4 {
                                dk[t] += v * q[t];
                            }
                            dplane[i * w + j] += kw[0] * q[0] + kw[1] * q[1] + kw[2] * q[2] + kw[3] * q[3];
                        }
                    }
                    if let Some(gp) = grad.as_deref_mut() {
                        let gw = &mut gp.weight.data[(c * cout + o) * 4..][..4];
                        for t in 0..4 {
                            gw[t] += dk[t];
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer, `y = W x + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: normal_init(&[out_dim, in_dim], (gain / in_dim as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub(crate) fn forward(&self, x: &Matrix) -> Matrix {
        let (din, dout) = (self.in_dim(), self.out_dim());
        debug_assert_eq!(x.cols, din);
        let mut y = Matrix::zeros(x.rows, dout);
        for r in 0..x.rows {
            let xr = x.row(r);
            for o in 0..dout {
                y.data[r * dout + o] = self.bias.data[o] + dot(&self.weight.data[o * din..(o + 1) * din], xr);
            }
        }
        y
    }

    pub(crate) fn backward(&self, x: &Matrix, grad_out: &Matrix, grad: Option<&mut Linear>) -> Matrix {
        let (din, dout) = (self.in_dim(), self.out_dim());
        if let Some(gp) = grad {
            for r in 0..x.rows {
                let xr = x.row(r);
                for o in 0..dout {
                    let g = grad_out.get(r, o);
                    gp.bias.data[o] += g;
                    axpy(g, xr, &mut gp.weight.data[o * din..(o + 1) * din]);
                }
            }
        }
        let mut dx = Matrix::zeros(x.rows, din);
        for r in 0..x.rows {
            let dxr = &mut dx.data[r * din..(r + 1) * din];
            for o in 0..dout {
                axpy(grad_out.get(r, o), &self.weight.data[o * din..(o + 1) * din], dxr);
            }
        }
        dx
    }
}

pub(crate) fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zero the gradient wherever the forward output was clipped.
pub(crate) fn relu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, &y) in grad.iter_mut().zip(out) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn global_avg_pool(x: &Act) -> Matrix {
    let p = x.plane();
    let mut m = Matrix::zeros(x.n, x.c);
    for (i, v) in m.data.iter_mut().enumerate() {
        *v = x.data[i * p..(i + 1) * p].iter().sum::<f64>() / p as f64;
    }
    m
}

pub(crate) fn global_avg_pool_backward(grad: &Matrix, h: usize, w: usize) -> Act {
    let p = h * w;
    let mut dx = Act::zeros(grad.rows, grad.cols, h, w);
    for (i, &g) in grad.data.iter().enumerate() {
        dx.data[i * p..(i + 1) * p].iter_mut().for_each(|v| *v = g / p as f64);
    }
    dx
}
