//! Minimal dense layers with hand-written backward passes. Everything is
//! f64, CPU-only, and deterministic; gradients are exact, which the
//! finite-difference oracles in the tests rely on.

use ndarray::{Array1, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) type Tensor = Array3<f64>; // (channels, height, width)

/// 3x3 (or kxk) convolution with zero padding k/2 and stride 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Conv2d {
    pub w: Array4<f64>, // (c_out, c_in, k, k)
    pub b: Array1<f64>,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let w = Array4::from_shape_fn((c_out, c_in, k, k), |_| normal(rng) * std);
        Conv2d {
            w,
            b: Array1::zeros(c_out),
            stride,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.dim().2;
        let pad = k / 2;
        (
            (h + 2 * pad - k) / self.stride + 1,
            (w + 2 * pad - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (c_in, h, w) = x.dim();
        let (c_out, c_in_w, k, _) = self.w.dim();
        assert_eq!(c_in, c_in_w, "conv input channels");
        let pad = k / 2;
        let (oh, ow) = self.out_hw(h, w);
        let xs = x.as_slice().expect("contiguous");
        let ws = self.w.as_slice().expect("contiguous");
        let mut out = Array3::zeros((c_out, oh, ow));
        let os = out.as_slice_mut().expect("contiguous");
        for co in 0..c_out {
            let w_co = &ws[co * c_in * k * k..(co + 1) * c_in * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.b[co];
                    for ci in 0..c_in {
                        let x_ci = &xs[ci * h * w..(ci + 1) * h * w];
                        let w_ci = &w_co[ci * k * k..(ci + 1) * k * k];
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &x_ci[iy as usize * w..(iy as usize + 1) * w];
                            let w_row = &w_ci[ky * k..(ky + 1) * k];
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += w_row[kx] * row[ix as usize];
                            }
                        }
                    }
                    os[co * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
        out
    }

    /// Returns (grad_input, grad_w, grad_b) for upstream gradient `gout`.
    pub fn backward(&self, x: &Tensor, gout: &Tensor) -> (Tensor, Array4<f64>, Array1<f64>) {
        let (c_in, h, w) = x.dim();
        let (c_out, _, k, _) = self.w.dim();
        let pad = k / 2;
        let (oh, ow) = self.out_hw(h, w);
        debug_assert_eq!(gout.dim(), (c_out, oh, ow));
        let xs = x.as_slice().expect("contiguous");
        let ws = self.w.as_slice().expect("contiguous");
        let gs = gout.as_slice().expect("contiguous");
        let mut gin = Array3::zeros((c_in, h, w));
        let mut gw = Array4::zeros(self.w.dim());
        let mut gb = Array1::zeros(c_out);
        {
            let gin_s = gin.as_slice_mut().expect("contiguous");
            let gw_s = gw.as_slice_mut().expect("contiguous");
            for co in 0..c_out {
                let w_co = &ws[co * c_in * k * k..(co + 1) * c_in * k * k];
                let gw_co = &mut gw_s[co * c_in * k * k..(co + 1) * c_in * k * k];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gs[co * oh * ow + oy * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        gb[co] += g;
                        for ci in 0..c_in {
                            let x_base = ci * h * w;
                            let w_base = ci * k * k;
                            for ky in 0..k {
                                let iy = (oy * self.stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * self.stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = x_base + iy as usize * w + ix as usize;
                                    let wi = w_base + ky * k + kx;
                                    gw_co[wi] += g * xs[xi];
                                    gin_s[xi] += g * w_co[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (gin, gw, gb)
    }
}

pub(crate) const LEAK: f64 = 0.1;

pub(crate) fn leaky_relu(x: &Tensor) -> Tensor {
    x.mapv(|v| if v > 0.0 { v } else { LEAK * v })
}

pub(crate) fn leaky_relu_backward(x: &Tensor, gout: &Tensor) -> Tensor {
    let mut g = gout.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv *= LEAK;
        }
    });
    g
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn sigmoid(x: &Tensor) -> Tensor {
    x.mapv(sigmoid_scalar)
}

/// `y` is the sigmoid output, not the pre-activation.
pub(crate) fn sigmoid_backward(y: &Tensor, gout: &Tensor) -> Tensor {
    let mut g = gout.clone();
    g.zip_mut_with(y, |gv, &yv| *gv *= yv * (1.0 - yv));
    g
}

pub(crate) fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h * 2, w * 2), |(ci, v, u)| x[(ci, v / 2, u / 2)])
}

pub(crate) fn upsample2_backward(gout: &Tensor) -> Tensor {
    let (c, h2, w2) = gout.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut g = Array3::zeros((c, h, w));
    for ci in 0..c {
        for v in 0..h2 {
            for u in 0..w2 {
                g[(ci, v / 2, u / 2)] += gout[(ci, v, u)];
            }
        }
    }
    g
}

pub(crate) fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (ca, h, w) = a.dim();
    let (cb, hb, wb) = b.dim();
    assert_eq!((h, w), (hb, wb), "concat spatial dims");
    let mut out = Array3::zeros((ca + cb, h, w));
    out.slice_mut(ndarray::s![..ca, .., ..]).assign(a);
    out.slice_mut(ndarray::s![ca.., .., ..]).assign(b);
    out
}

pub(crate) fn split_channels(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    (
        g.slice(ndarray::s![..ca, .., ..]).to_owned(),
        g.slice(ndarray::s![ca.., .., ..]).to_owned(),
    )
}

pub(crate) fn global_avg_pool(x: &Tensor) -> Array1<f64> {
    let (c, h, w) = x.dim();
    let n = (h * w) as f64;
    Array1::from_shape_fn(c, |ci| x.slice(ndarray::s![ci, .., ..]).sum() / n)
}

pub(crate) fn global_avg_pool_backward(gout: &Array1<f64>, dim: (usize, usize, usize)) -> Tensor {
    let (c, h, w) = dim;
    let n = (h * w) as f64;
    Array3::from_shape_fn((c, h, w), |(ci, _, _)| gout[ci] / n)
}

/// Fully connected layer on a flat feature vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    pub w: ndarray::Array2<f64>, // (out, in)
    pub b: Array1<f64>,
}

impl Linear {
    pub fn new(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / n_in as f64).sqrt();
        Linear {
            w: ndarray::Array2::from_shape_fn((n_out, n_in), |_| normal(rng) * std),
            b: Array1::zeros(n_out),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    pub fn backward(
        &self,
        x: &Array1<f64>,
        gout: &Array1<f64>,
    ) -> (Array1<f64>, ndarray::Array2<f64>, Array1<f64>) {
        let gin = self.w.t().dot(gout);
        let gw = gout
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&x.view().insert_axis(ndarray::Axis(0)));
        (gin, gw, gout.clone())
    }
}

pub(crate) fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps = logits.mapv(|v| (v - m).exp());
    let s = exps.sum();
    exps / s
}

/// Box-Muller standard normal; two uniform draws per value keeps the
/// stream layout independent of rejection behavior.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Adam over one flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
}

impl AdamState {
    pub fn new(n: usize, beta1: f64) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2: 0.999,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= lr * mhat / (vhat.sqrt() + 1e-8);
        }
    }
}
