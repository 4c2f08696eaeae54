//! Network layers with hand-written backward passes.
//!
//! Every layer keeps its parameters and their accumulated gradients in
//! [`Param`]s. Per-sample work is spread over the rayon pool; reductions
//! across the batch are always summed in sample order so results do not
//! depend on the thread count.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::kernels::{
    conv3_direct, conv3_weight_grad, pack_adjoint, pack_forward, pad1, simd_available,
};
use super::tensor::Tensor;

/// A learnable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// `c = a·b + beta·c` with arbitrary strides; `c` is row-major with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    (beta, rsc): (f32, isize),
    c: &mut [f32],
) {
    debug_assert!(c.len() >= (m - 1) * rsc as usize + n);
    // SAFETY: callers pass buffers whose extents cover every index the
    // strides address: `a` holds m×k, `b` holds k×n and `c` holds m rows of n values
    // spaced `rsc` apart.
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
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// Unfolds rows `y0..y1` of a `c×h×w` sample into a `(c·9)×((y1-y0)·w)` matrix.
fn im2col3(x: &[f32], c: usize, h: usize, w: usize, (y0, y1): (usize, usize), col: &mut [f32]) {
    let hw = h * w;
    let tw = (y1 - y0) * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * tw..][..tw];
                for y in y0..y1 {
                    let dst = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(sy - 1) * w..sy * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: scatters-adds a band matrix back into the sample.
fn col2im3(col: &[f32], c: usize, h: usize, w: usize, (y0, y1): (usize, usize), x: &mut [f32]) {
    let hw = h * w;
    let tw = (y1 - y0) * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * tw..][..tw];
                for y in y0..y1 {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        continue;
                    }
                    let src = &row[(y - y0) * w..(y - y0 + 1) * w];
                    let dst = &mut plane[(sy - 1) * w..sy * w];
                    match kx {
                        0 => add_assign(&mut dst[..w - 1], &src[1..]),
                        1 => add_assign(dst, src),
                        _ => add_assign(&mut dst[1..], &src[..w - 1]),
                    }
                }
            }
        }
    }
}

/// Unfolded band buffers are capped at this many floats so they stay cache resident.
const BAND_FLOATS: usize = 1 << 15;

/// Row bands `[y0, y1)` covering `0..h`.
fn bands(h: usize, w: usize, rows_k: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = (BAND_FLOATS / (rows_k * w)).clamp(1, h);
    (0..h).step_by(rows).map(move |y0| (y0, (y0 + rows).min(h)))
}

#[inline]
fn add_assign(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Stride-1 convolution with a square `k×k` kernel (`k` ∈ {1, 3}) and
/// zero padding that preserves the spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][ky][kx]`
    pub weight: Param,
    pub bias: Option<Param>,
    /// When false, `backward` skips the input gradient and returns zeros.
    pub input_grad: bool,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel == 1 || kernel == 3, "only 1x1 and 3x3 kernels");
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = (0..out_channels * fan_in)
            .map(|_| normal.sample(rng) as f32)
            .collect();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(weight),
            bias: bias.then(|| Param::new(vec![0.0; out_channels])),
            input_grad: true,
        }
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channels");
        let hw = h * w;
        let k = self.col_rows();
        let co = self.out_channels;
        let mut out = Tensor::zeros([n, co, h, w]);
        if self.kernel == 3 && simd_available() {
            let packed = pack_forward(&self.weight.value, co, c);
            out.data_mut()
                .par_chunks_mut(co * hw)
                .enumerate()
                .for_each_init(Vec::new, |xpad, (i, dst)| {
                    pad1(x.sample(i), c, h, w, xpad);
                    conv3_direct(xpad, c, h, w, &packed, co, dst);
                    if let Some(b) = &self.bias {
                        for (o, &bv) in b.value.iter().enumerate() {
                            dst[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += bv);
                        }
                    }
                });
            return out;
        }
        out.data_mut()
            .par_chunks_mut(co * hw)
            .enumerate()
            .for_each_init(
                || vec![0.0f32; if self.kernel == 3 { BAND_FLOATS.max(k * w) } else { 0 }],
                |col, (i, dst)| {
                    let xs = x.sample(i);
                    let beta = match &self.bias {
                        Some(b) => {
                            for (o, &bv) in b.value.iter().enumerate() {
                                dst[o * hw..(o + 1) * hw].fill(bv);
                            }
                            1.0
                        }
                        None => 0.0,
                    };
                    if self.kernel == 1 {
                        gemm(co, k, hw, &self.weight.value, (k as isize, 1), xs, (hw as isize, 1), (beta, hw as isize), dst);
                        return;
                    }
                    for (y0, y1) in bands(h, w, k) {
                        let tw = (y1 - y0) * w;
                        im2col3(xs, c, h, w, (y0, y1), col);
                        gemm(
                            co,
                            k,
                            tw,
                            &self.weight.value,
                            (k as isize, 1),
                            col,
                            (tw as isize, 1),
                            (beta, hw as isize),
                            &mut dst[y0 * w..],
                        );
                    }
                },
            );
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dout: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let k = self.col_rows();
        let co = self.out_channels;
        let kernel = self.kernel;
        let weight = &self.weight.value;
        let input_grad = self.input_grad;
        let adjoint = (kernel == 3 && simd_available()).then(|| pack_adjoint(weight, co, c));
        let mut dx = Tensor::zeros([n, c, h, w]);
        let per_sample: Vec<Vec<f32>> = dx
            .data_mut()
            .par_chunks_mut(c * hw)
            .enumerate()
            .map(|(i, dxs)| {
                let xs = x.sample(i);
                let ds = dout.sample(i);
                let mut dw = vec![0.0f32; co * k];
                if let Some(packed) = &adjoint {
                    let mut xpad = Vec::new();
                    pad1(xs, c, h, w, &mut xpad);
                    conv3_weight_grad(&xpad, c, h, w, ds, co, &mut dw);
                    if input_grad {
                        pad1(ds, co, h, w, &mut xpad);
                        conv3_direct(&xpad, co, h, w, packed, c, dxs);
                    }
                } else if kernel == 3 {
                    let mut col = vec![0.0f32; BAND_FLOATS.max(k * w)];
                    for (y0, y1) in bands(h, w, k) {
                        let tw = (y1 - y0) * w;
                        let dband = &ds[y0 * w..];
                        im2col3(xs, c, h, w, (y0, y1), &mut col);
                        // dW += dout · colᵀ
                        gemm(co, tw, k, dband, (hw as isize, 1), &col, (1, tw as isize), (1.0, k as isize), &mut dw);
                        if input_grad {
                            // dcol = Wᵀ · dout
                            gemm(k, co, tw, weight, (1, k as isize), dband, (hw as isize, 1), (0.0, tw as isize), &mut col);
                            col2im3(&col, c, h, w, (y0, y1), dxs);
                        }
                    }
                } else {
                    gemm(co, hw, k, ds, (hw as isize, 1), xs, (1, hw as isize), (0.0, k as isize), &mut dw);
                    if input_grad {
                        gemm(k, co, hw, weight, (1, k as isize), ds, (hw as isize, 1), (0.0, hw as isize), dxs);
                    }
                }
                dw
            })
            .collect();
        for dw in &per_sample {
            add_assign(&mut self.weight.grad, dw);
        }
        if let Some(b) = &mut self.bias {
            for i in 0..n {
                let ds = dout.sample(i);
                for (o, g) in b.grad.iter_mut().enumerate() {
                    *g += ds[o * hw..(o + 1) * hw].iter().sum::<f32>();
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

const LANES: usize = 16;

/// Sums `f(v)` over independent f32 lanes so the loop vectorizes; lanes are
/// combined in f64.
fn lane_sum(xs: &[f32], f: impl Fn(f32) -> f32) -> f64 {
    let mut acc = [0.0f32; LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for ch in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a += f(v);
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|&v| f(v) as f64).sum();
    acc.iter().map(|&a| a as f64).sum::<f64>() + tail
}

fn lane_sum2(xs: &[f32], ys: &[f32], f: impl Fn(f32, f32) -> f32) -> f64 {
    let mut acc = [0.0f32; LANES];
    let mut cx = xs.chunks_exact(LANES);
    let mut cy = ys.chunks_exact(LANES);
    for (a16, b16) in (&mut cx).zip(&mut cy) {
        for ((a, &u), &v) in acc.iter_mut().zip(a16).zip(b16) {
            *a += f(u, v);
        }
    }
    let tail: f64 = cx.remainder().iter().zip(cy.remainder()).map(|(&u, &v)| f(u, v) as f64).sum();
    acc.iter().map(|&a| a as f64).sum::<f64>() + tail
}

/// Affine instance normalization followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct NormRelu {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f32,
}

/// Saved state of a [`NormRelu`] forward pass.
#[derive(Clone, Debug)]
pub struct NormReluCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    out: Tensor,
}

impl NormReluCache {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

impl NormRelu {
    pub fn new(channels: usize) -> Self {
        NormRelu {
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> NormReluCache {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let mut xhat = x.clone();
        let mut out = Tensor::zeros([n, c, h, w]);
        let mut inv_std = vec![0.0f32; n * c];
        xhat.data_mut()
            .par_chunks_mut(hw)
            .zip(out.data_mut().par_chunks_mut(hw))
            .zip(inv_std.par_iter_mut())
            .enumerate()
            .for_each(|(plane, ((xh, o), is))| {
                let ch = plane % c;
                let mean = lane_sum(xh, |v| v) / hw as f64;
                let m = mean as f32;
                let var = lane_sum(xh, |v| (v - m) * (v - m)) / hw as f64;
                let inv = (1.0 / (var + self.eps as f64).sqrt()) as f32;
                let mean = mean as f32;
                *is = inv;
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for (v, ov) in xh.iter_mut().zip(o.iter_mut()) {
                    *v = (*v - mean) * inv;
                    *ov = (g * *v + b).max(0.0);
                }
            });
        NormReluCache { xhat, inv_std, out }
    }

    pub fn backward(&mut self, cache: &NormReluCache, dout: &Tensor) -> Tensor {
        let [n, c, h, w] = dout.shape();
        let hw = h * w;
        let mut dx = Tensor::zeros([n, c, h, w]);
        let gamma = &self.gamma.value;
        // (dgamma, dbeta) contribution of every (sample, channel) plane
        let partial: Vec<(f32, f32)> = dx
            .data_mut()
            .par_chunks_mut(hw)
            .enumerate()
            .map(|(plane, dxp)| {
                let ch = plane % c;
                let xh = &cache.xhat.data()[plane * hw..(plane + 1) * hw];
                let y = &cache.out.data()[plane * hw..(plane + 1) * hw];
                let dy = &dout.data()[plane * hw..(plane + 1) * hw];
                for ((d, &g), &o) in dxp.iter_mut().zip(dy).zip(y) {
                    *d = if o > 0.0 { g } else { 0.0 };
                }
                let sum_d = lane_sum(dxp, |v| v);
                let sum_dx = lane_sum2(dxp, xh, |d, v| d * v);
                let g = gamma[ch];
                let inv = cache.inv_std[plane];
                let scale = g * inv / hw as f32;
                let (sd, sdx) = (sum_d as f32, sum_dx as f32);
                for i in 0..hw {
                    dxp[i] = scale * (hw as f32 * dxp[i] - sd - xh[i] * sdx);
                }
                (sdx, sd)
            })
            .collect();
        for (plane, (dg, db)) in partial.into_iter().enumerate() {
            let ch = plane % c;
            self.gamma.grad[ch] += dg;
            self.beta.grad[ch] += db;
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

/// Two rounds of 3×3 convolution, instance normalization and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleConv {
    pub conv1: Conv2d,
    pub norm1: NormRelu,
    pub conv2: Conv2d,
    pub norm2: NormRelu,
}

#[derive(Clone, Debug)]
pub struct DoubleConvCache {
    input: Tensor,
    n1: NormReluCache,
    n2: NormReluCache,
}

impl DoubleConvCache {
    pub fn output(&self) -> &Tensor {
        self.n2.output()
    }
}

impl DoubleConv {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        // Conv biases would be cancelled exactly by the normalization.
        let conv1 = Conv2d::new(cin, cout, 3, false, rng);
        let conv2 = Conv2d::new(cout, cout, 3, false, rng);
        DoubleConv {
            conv1,
            norm1: NormRelu::new(cout),
            conv2,
            norm2: NormRelu::new(cout),
        }
    }

    pub fn forward(&self, x: Tensor) -> DoubleConvCache {
        let n1 = self.norm1.forward(&self.conv1.forward(&x));
        let n2 = self.norm2.forward(&self.conv2.forward(n1.output()));
        DoubleConvCache { input: x, n1, n2 }
    }

    pub fn backward(&mut self, cache: &DoubleConvCache, dout: &Tensor) -> Tensor {
        let d = self.norm2.backward(&cache.n2, dout);
        let d = self.conv2.backward(cache.n1.output(), &d);
        let d = self.norm1.backward(&cache.n1, &d);
        self.conv1.backward(&cache.input, &d)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.norm1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.norm2.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.norm1.params());
        v.extend(self.conv2.params());
        v.extend(self.norm2.params());
        v
    }
}

/// 2×2 max pooling; returns the pooled tensor and the flat argmax offsets.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (2 * y) * w + 2 * xx;
                for cand in [
                    (2 * y) * w + 2 * xx + 1,
                    (2 * y + 1) * w + 2 * xx,
                    (2 * y + 1) * w + 2 * xx + 1,
                ] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                let o = p * oh * ow + y * ow + xx;
                out.data_mut()[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(dout: &Tensor, arg: &[u32], input_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = input_shape;
    let ohw = dout.plane_len();
    let mut dx = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for i in 0..ohw {
            dst[arg[p * ohw + i] as usize] += dout.data()[p * ohw + i];
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (xx, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dout: &Tensor) -> Tensor {
    let [n, c, oh, ow] = dout.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let src = &dout.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
            }
        }
    }
    dx
}
