//! Minimal convolutional building blocks with hand-written backward passes.
//!
//! Tensors are flat `f64` buffers in channel-major order. Convolutions go
//! through im2col and a dense GEMM. The activation is SiLU, which is smooth,
//! so finite-difference checks through the network are well-conditioned.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_ch x (in_ch * kernel * kernel)`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// What a convolution keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrads {
    pub fn zeros_like(conv: &Conv2d) -> Self {
        ConvGrads {
            weight: vec![0.0; conv.weight.len()],
            bias: vec![0.0; conv.bias.len()],
        }
    }
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn init_he(&mut self, rng: &mut ChaCha8Rng, gain: f64) {
        let std = gain * (2.0 / self.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in &mut self.weight {
            *w = normal.sample(rng);
        }
        self.bias.fill(0.0);
    }

    pub fn out_size(&self, in_h: usize, in_w: usize) -> (usize, usize) {
        (
            (in_h + 2 * self.pad - self.kernel) / self.stride + 1,
            (in_w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, input: &[f64], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
        let k = self.kernel;
        let p = out_h * out_w;
        let mut cols = vec![0.0; self.fan_in() * p];
        for c in 0..self.in_ch {
            let plane = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                        for ox in 0..out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < in_w as isize {
                                dst[oy * out_w + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], cache: &ConvCache) -> Vec<f64> {
        let k = self.kernel;
        let (in_h, in_w, out_h, out_w) = (cache.in_h, cache.in_w, cache.out_h, cache.out_w);
        let p = out_h * out_w;
        let mut out = vec![0.0; self.in_ch * in_h * in_w];
        for c in 0..self.in_ch {
            let plane = &mut out[c * in_h * in_w..(c + 1) * in_h * in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        for ox in 0..out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < in_w as isize {
                                plane[iy as usize * in_w + ix as usize] += src[oy * out_w + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the output (`out_ch x out_h x out_w`) and its cache.
    pub fn forward(&self, input: &[f64], in_h: usize, in_w: usize) -> (Vec<f64>, ConvCache) {
        assert_eq!(input.len(), self.in_ch * in_h * in_w);
        let (out_h, out_w) = self.out_size(in_h, in_w);
        let p = out_h * out_w;
        let kk = self.fan_in();
        let cols = self.im2col(input, in_h, in_w, out_h, out_w);
        let mut out = vec![0.0; self.out_ch * p];
        for (o, b) in self.bias.iter().enumerate() {
            out[o * p..(o + 1) * p].fill(*b);
        }
        // out (out_ch x p) += W (out_ch x kk) * cols (kk x p)
        unsafe {
            matrixmultiply::dgemm(
                self.out_ch,
                kk,
                p,
                1.0,
                self.weight.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                p as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        (
            out,
            ConvCache {
                cols,
                in_h,
                in_w,
                out_h,
                out_w,
            },
        )
    }

    /// Backward pass. Accumulates parameter gradients into `grads` when
    /// given and returns the input gradient when `need_input` is set.
    pub fn backward(
        &self,
        cache: &ConvCache,
        d_out: &[f64],
        grads: Option<&mut ConvGrads>,
        need_input: bool,
    ) -> Option<Vec<f64>> {
        let p = cache.out_h * cache.out_w;
        let kk = self.fan_in();
        assert_eq!(d_out.len(), self.out_ch * p);
        if let Some(g) = grads {
            for o in 0..self.out_ch {
                g.bias[o] += d_out[o * p..(o + 1) * p].iter().sum::<f64>();
            }
            // dW (out_ch x kk) += d_out (out_ch x p) * cols^T (p x kk)
            unsafe {
                matrixmultiply::dgemm(
                    self.out_ch,
                    p,
                    kk,
                    1.0,
                    d_out.as_ptr(),
                    p as isize,
                    1,
                    cache.cols.as_ptr(),
                    1,
                    p as isize,
                    1.0,
                    g.weight.as_mut_ptr(),
                    kk as isize,
                    1,
                );
            }
        }
        if !need_input {
            return None;
        }
        let mut d_cols = vec![0.0; kk * p];
        // d_cols (kk x p) = W^T (kk x out_ch) * d_out (out_ch x p)
        unsafe {
            matrixmultiply::dgemm(
                kk,
                self.out_ch,
                p,
                1.0,
                self.weight.as_ptr(),
                1,
                kk as isize,
                d_out.as_ptr(),
                p as isize,
                1,
                0.0,
                d_cols.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        Some(self.col2im(&d_cols, cache))
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
pub fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// A stack of convolutions with SiLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct NetTrace {
    caches: Vec<ConvCache>,
    /// Pre-activations of every layer except the last.
    pre: Vec<Vec<f64>>,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvNet {
    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.layers.len();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let gain = if i + 1 == n { 0.1 } else { 1.0 };
            layer.init_he(&mut rng, gain);
        }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_ch)
    }

    pub fn output_size(&self, in_h: usize, in_w: usize) -> (usize, usize) {
        self.layers.iter().fold((in_h, in_w), |(h, w), l| l.out_size(h, w))
    }

    pub fn forward(&self, input: &[f64], in_h: usize, in_w: usize) -> (Vec<f64>, NetTrace) {
        let mut x = input.to_vec();
        let (mut h, mut w) = (in_h, in_w);
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (z, cache) = layer.forward(&x, h, w);
            h = cache.out_h;
            w = cache.out_w;
            caches.push(cache);
            if i == last {
                x = z;
            } else {
                x = z.iter().map(|&v| silu(v)).collect();
                pre.push(z);
            }
        }
        (
            x,
            NetTrace {
                caches,
                pre,
                in_h,
                in_w,
                out_h: h,
                out_w: w,
            },
        )
    }

    /// Backpropagates `d_out`; accumulates parameter gradients when `grads`
    /// is given and returns the input gradient when `need_input` is set.
    pub fn backward(
        &self,
        trace: &NetTrace,
        d_out: &[f64],
        mut grads: Option<&mut [ConvGrads]>,
        need_input: bool,
    ) -> Option<Vec<f64>> {
        let mut d = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                for (g, &z) in d.iter_mut().zip(&trace.pre[i]) {
                    *g *= silu_grad(z);
                }
            }
            let g = grads.as_deref_mut().map(|gs| &mut gs[i]);
            let want_input = i > 0 || need_input;
            d = self.layers[i].backward(&trace.caches[i], &d, g, want_input)?;
        }
        Some(d)
    }

    pub fn zero_grads(&self) -> Vec<ConvGrads> {
        self.layers.iter().map(ConvGrads::zeros_like).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net() -> ConvNet {
        let mut net = ConvNet {
            layers: vec![Conv2d::new(3, 4, 3, 2, 1), Conv2d::new(4, 5, 3, 1, 1), Conv2d::new(5, 2, 1, 1, 0)],
        };
        net.init(11);
        for (i, l) in net.layers.iter_mut().enumerate() {
            for (j, b) in l.bias.iter_mut().enumerate() {
                *b = 0.05 * (i + j) as f64 - 0.1;
            }
        }
        net
    }

    fn input(h: usize, w: usize) -> Vec<f64> {
        (0..3 * h * w).map(|i| ((i * 29) % 31) as f64 / 31.0).collect()
    }

    fn objective(net: &ConvNet, x: &[f64], h: usize, w: usize, weights: &[f64]) -> f64 {
        let (y, _) = net.forward(x, h, w);
        y.iter().zip(weights).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut conv = Conv2d::new(2, 3, 3, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        conv.init_he(&mut rng, 1.0);
        conv.bias = vec![0.1, -0.2, 0.3];
        let (h, w) = (7, 6);
        let x: Vec<f64> = (0..2 * h * w).map(|i| (i as f64).sin()).collect();
        let (y, cache) = conv.forward(&x, h, w);
        let (oh, ow) = (cache.out_h, cache.out_w);
        assert_eq!((oh, ow), (4, 3));
        for o in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += conv.weight[((o * 2 + c) * 3 + ky) * 3 + kx]
                                        * x[(c * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((acc - y[(o * oh + oy) * ow + ox]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = small_net();
        let (h, w) = (6, 5);
        let x = input(h, w);
        let (y, trace) = net.forward(&x, h, w);
        let weights: Vec<f64> = (0..y.len()).map(|i| ((i * 5) % 9) as f64 - 4.0).collect();
        let g = net.backward(&trace, &weights, None, true).unwrap();
        let step = 1e-5;
        for i in 0..x.len() {
            let mut a = x.clone();
            a[i] += step;
            let mut b = x.clone();
            b[i] -= step;
            let fd = (objective(&net, &a, h, w, &weights) - objective(&net, &b, h, w, &weights)) / (2.0 * step);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let net = small_net();
        let (h, w) = (6, 5);
        let x = input(h, w);
        let (y, trace) = net.forward(&x, h, w);
        let weights: Vec<f64> = (0..y.len()).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let mut grads = net.zero_grads();
        net.backward(&trace, &weights, Some(&mut grads), false);
        let step = 1e-5;
        for (l, g) in grads.iter().enumerate() {
            for j in (0..net.layers[l].weight.len()).step_by(7) {
                let mut a = net.clone();
                a.layers[l].weight[j] += step;
                let mut b = net.clone();
                b.layers[l].weight[j] -= step;
                let fd = (objective(&a, &x, h, w, &weights) - objective(&b, &x, h, w, &weights)) / (2.0 * step);
                let an = g.weight[j];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "layer {l} w{j}: {fd} vs {an}");
            }
            for j in 0..net.layers[l].bias.len() {
                let mut a = net.clone();
                a.layers[l].bias[j] += step;
                let mut b = net.clone();
                b.layers[l].bias[j] -= step;
                let fd = (objective(&a, &x, h, w, &weights) - objective(&b, &x, h, w, &weights)) / (2.0 * step);
                assert!((fd - g.bias[j]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut opt = Adam::new(2, 0.1);
        let mut p = vec![1.0, -1.0];
        opt.update(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }
}
