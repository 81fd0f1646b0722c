//! Minimal reverse-mode building blocks for the denoiser.
//!
//! Every layer owns a slice of one flat `f32` parameter vector (an offset and
//! a length) so optimizers, EMA and checkpointing can treat the whole network
//! as a single buffer. Forward passes return whatever the matching backward
//! pass needs; nothing is stored inside the layers themselves.

use rand::Rng;
use rand_distr::StandardNormal;

/// Channel-major activation map (`c × h × w`, row-major inside each channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length mismatch");
        Self { c, h, w, data }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Adds `bias[c]` to every element of channel `c`.
    pub fn add_channel_bias(&mut self, bias: &[f32]) {
        let plane = self.plane();
        for (ch, b) in bias.iter().enumerate() {
            for v in &mut self.data[ch * plane..(ch + 1) * plane] {
                *v += *b;
            }
        }
    }

    /// Per-channel sum, the adjoint of [`Tensor::add_channel_bias`].
    pub fn channel_sums(&self) -> Vec<f32> {
        let plane = self.plane();
        (0..self.c)
            .map(|ch| self.data[ch * plane..(ch + 1) * plane].iter().sum())
            .collect()
    }

    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor { c: a.c + b.c, h: a.h, w: a.w, data }
    }

    /// Inverse of [`Tensor::concat`]: splits the first `ca` channels off.
    pub fn split(self, ca: usize) -> (Tensor, Tensor) {
        let plane = self.plane();
        let mut data = self.data;
        let tail = data.split_off(ca * plane);
        (
            Tensor { c: ca, h: self.h, w: self.w, data },
            Tensor { c: self.c - ca, h: self.h, w: self.w, data: tail },
        )
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Multiplies `grad` in place by SiLU'(pre).
pub fn silu_backward(pre: &[f32], grad: &mut [f32]) {
    for (g, &x) in grad.iter_mut().zip(pre) {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    }
}

pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for ch in 0..x.c {
        let src = &x.data[ch * x.plane()..(ch + 1) * x.plane()];
        let dst = &mut out.data[ch * h2 * w2..(ch + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * w2 + xx] = 0.25 * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(grad.c, h, w);
    let plane = h * w;
    for ch in 0..grad.c {
        let g = &grad.data[ch * grad.plane()..(ch + 1) * grad.plane()];
        let dst = &mut out.data[ch * plane..(ch + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * g[(y / 2) * grad.w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for ch in 0..x.c {
        let src = &x.data[ch * x.plane()..(ch + 1) * x.plane()];
        let dst = &mut out.data[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h / 2, grad.w / 2);
    let mut out = Tensor::zeros(grad.c, h, w);
    for ch in 0..grad.c {
        let g = &grad.data[ch * grad.plane()..(ch + 1) * grad.plane()];
        let dst = &mut out.data[ch * h * w..(ch + 1) * h * w];
        for y in 0..grad.h {
            for x in 0..grad.w {
                dst[(y / 2) * w + x / 2] += g[y * grad.w + x];
            }
        }
    }
    out
}

/// `c[m×n] (+)= a[m×k] · b[k×n]` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    c: &mut [f32],
    rsc: isize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: every slice is large enough for the requested strided extents,
    // checked by the callers' shape bookkeeping (debug_assert above for `c`).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// Location of a parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    #[inline]
    pub fn of<'a>(&self, p: &'a [f32]) -> &'a [f32] {
        &p[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a>(&self, p: &'a mut [f32]) -> &'a mut [f32] {
        &mut p[self.offset..self.offset + self.len]
    }
}

/// Allocates parameter slots and records their names and shapes.
#[derive(Debug, Default, Clone)]
pub struct ParamLayout {
    pub entries: Vec<(String, Vec<usize>, Slot)>,
    pub total: usize,
}

impl ParamLayout {
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize]) -> Slot {
        let len = shape.iter().product();
        let slot = Slot { offset: self.total, len };
        self.total += len;
        self.entries.push((name.into(), shape.to_vec(), slot));
        slot
    }
}

/// Square same-padded convolution (kernel 1 or 3), stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Slot,
    pub bias: Slot,
}

impl Conv2d {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        assert!(k == 1 || k == 3, "only 1x1 and 3x3 kernels are supported");
        let weight = layout.alloc(format!("{name}.weight"), &[cout, cin, k, k]);
        let bias = layout.alloc(format!("{name}.bias"), &[cout]);
        Self { cin, cout, k, weight, bias }
    }

    pub fn init<R: Rng>(&self, params: &mut [f32], rng: &mut R, gain: f32) {
        let fan_in = (self.cin * self.k * self.k) as f32;
        let std = gain * (2.0 / fan_in).sqrt();
        for w in self.weight.of_mut(params) {
            *w = std * rng.sample::<f32, _>(StandardNormal);
        }
        self.bias.of_mut(params).fill(0.0);
    }

    fn im2col(&self, x: &Tensor) -> Vec<f32> {
        let (h, w) = (x.h, x.w);
        let plane = h * w;
        let mut cols = vec![0.0f32; self.cin * 9 * plane];
        for ci in 0..self.cin {
            let src = &x.data[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut cols[(ci * 9 + ky * 3 + kx) * plane..][..plane];
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..][..w];
                        let drow = &mut row[y * w..][..w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize) as usize;
                        for xx in x0..x1 {
                            drow[xx] = srow[(xx as isize + dx) as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize) -> Tensor {
        let plane = h * w;
        let mut out = Tensor::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let dst = &mut out.data[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &cols[(ci * 9 + ky * 3 + kx) * plane..][..plane];
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &row[y * w..][..w];
                        let drow = &mut dst[sy as usize * w..][..w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize) as usize;
                        for xx in x0..x1 {
                            drow[(xx as isize + dx) as usize] += srow[xx];
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the output and the im2col buffer (empty for 1×1 kernels).
    pub fn forward(&self, params: &[f32], x: &Tensor) -> (Tensor, Vec<f32>) {
        assert_eq!(x.c, self.cin, "conv input channel mismatch");
        let plane = x.plane();
        let kk = self.cin * self.k * self.k;
        let mut out = Tensor::zeros(self.cout, x.h, x.w);
        let wmat = self.weight.of(params);
        let cols = if self.k == 3 { self.im2col(x) } else { Vec::new() };
        let b: &[f32] = if self.k == 3 { &cols } else { &x.data };
        sgemm(
            self.cout,
            kk,
            plane,
            wmat,
            (kk as isize, 1),
            b,
            (plane as isize, 1),
            &mut out.data,
            plane as isize,
            false,
        );
        out.add_channel_bias(self.bias.of(params));
        (out, cols)
    }

    /// Accumulates parameter gradients into `grads` (when given) and returns
    /// the gradient with respect to the input.
    pub fn backward(
        &self,
        params: &[f32],
        grads: Option<&mut [f32]>,
        x: &Tensor,
        cols: &[f32],
        dy: &Tensor,
    ) -> Tensor {
        let plane = dy.plane();
        let kk = self.cin * self.k * self.k;
        let b: &[f32] = if self.k == 3 { cols } else { &x.data };
        if let Some(g) = grads {
            let gw = self.weight.of_mut(g);
            // dW += dY · colsᵀ
            sgemm(
                self.cout,
                plane,
                kk,
                &dy.data,
                (plane as isize, 1),
                b,
                (1, plane as isize),
                gw,
                kk as isize,
                true,
            );
            for (gb, s) in self.bias.of_mut(g).iter_mut().zip(dy.channel_sums()) {
                *gb += s;
            }
        }
        let wmat = self.weight.of(params);
        let mut dcols = vec![0.0f32; kk * plane];
        // dcols = Wᵀ · dY
        sgemm(
            kk,
            self.cout,
            plane,
            wmat,
            (1, kk as isize),
            &dy.data,
            (plane as isize, 1),
            &mut dcols,
            plane as isize,
            false,
        );
        if self.k == 3 {
            self.col2im(&dcols, dy.h, dy.w)
        } else {
            Tensor::from_vec(self.cin, dy.h, dy.w, dcols)
        }
    }
}

/// Fully connected layer on plain vectors.
#[derive(Debug, Clone)]
pub struct Dense {
    pub nin: usize,
    pub nout: usize,
    pub weight: Slot,
    pub bias: Slot,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, name: &str, nin: usize, nout: usize) -> Self {
        let weight = layout.alloc(format!("{name}.weight"), &[nout, nin]);
        let bias = layout.alloc(format!("{name}.bias"), &[nout]);
        Self { nin, nout, weight, bias }
    }

    pub fn init<R: Rng>(&self, params: &mut [f32], rng: &mut R, gain: f32) {
        let std = gain * (1.0 / self.nin as f32).sqrt();
        for w in self.weight.of_mut(params) {
            *w = std * rng.sample::<f32, _>(StandardNormal);
        }
        self.bias.of_mut(params).fill(0.0);
    }

    pub fn forward(&self, params: &[f32], x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.nin);
        let w = self.weight.of(params);
        self.bias
            .of(params)
            .iter()
            .enumerate()
            .map(|(o, b)| b + w[o * self.nin..(o + 1) * self.nin].iter().zip(x).map(|(a, b)| a * b).sum::<f32>())
            .collect()
    }

    pub fn backward(&self, params: &[f32], grads: Option<&mut [f32]>, x: &[f32], dy: &[f32]) -> Vec<f32> {
        if let Some(g) = grads {
            let gw = self.weight.of_mut(g);
            for (o, d) in dy.iter().enumerate() {
                for (gi, xi) in gw[o * self.nin..(o + 1) * self.nin].iter_mut().zip(x) {
                    *gi += d * xi;
                }
            }
            for (gb, d) in self.bias.of_mut(g).iter_mut().zip(dy) {
                *gb += d;
            }
        }
        let w = self.weight.of(params);
        let mut dx = vec![0.0f32; self.nin];
        for (o, d) in dy.iter().enumerate() {
            for (dxi, wi) in dx.iter_mut().zip(&w[o * self.nin..(o + 1) * self.nin]) {
                *dxi += d * wi;
            }
        }
        dx
    }
}
