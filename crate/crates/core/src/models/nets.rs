//! The three fixed architectures. Each net owns its layers, exposes a
//! cached forward pass, a backward pass returning parameter and input
//! gradients, and a flat parameter vector for optimizers and checkpoints.

use ndarray::{Array1, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nn::{
    concat_channels, global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward,
    sigmoid, sigmoid_backward, split_channels, upsample2, upsample2_backward, Conv2d, Linear,
    Tensor,
};
use crate::error::{Error, Result};

const GEN_C1: usize = 12;
const GEN_C2: usize = 16;
const DISC_C1: usize = 8;
const DISC_C2: usize = 16;
const CLF_C1: usize = 8;
const CLF_C2: usize = 16;

/// Normalized coordinate channels in [-1, 1], appended to generator input
/// so the net can learn position-dependent texture.
pub(crate) fn coord_channels(h: usize, w: usize) -> Tensor {
    Array3::from_shape_fn((2, h, w), |(c, v, u)| {
        if c == 0 {
            if w > 1 {
                u as f64 / (w - 1) as f64 * 2.0 - 1.0
            } else {
                0.0
            }
        } else if h > 1 {
            v as f64 / (h - 1) as f64 * 2.0 - 1.0
        } else {
            0.0
        }
    })
}

/// Encoder-decoder generator: full-res stage, stride-2 encoder, bottleneck,
/// nearest upsample with a skip connection back to full resolution.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GeneratorNet {
    pub conv1: Conv2d, // 5 -> 12, stride 1
    pub conv2: Conv2d, // 12 -> 16, stride 2
    pub conv3: Conv2d, // 16 -> 16, stride 1
    pub conv4: Conv2d, // 28 -> 3, stride 1
}

pub(crate) struct GenCache {
    x5: Tensor,
    z1: Tensor,
    e1: Tensor,
    z2: Tensor,
    e2: Tensor,
    z3: Tensor,
    cat: Tensor,
    out: Tensor,
}

pub(crate) struct GenGrads {
    flat: Vec<f64>,
}

impl GeneratorNet {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        GeneratorNet {
            conv1: Conv2d::new(5, GEN_C1, 3, 1, rng),
            conv2: Conv2d::new(GEN_C1, GEN_C2, 3, 2, rng),
            conv3: Conv2d::new(GEN_C2, GEN_C2, 3, 1, rng),
            conv4: Conv2d::new(GEN_C2 + GEN_C1, 3, 3, 1, rng),
        }
    }

    pub fn forward_cached(&self, img: &Tensor) -> (Tensor, GenCache) {
        let (_, h, w) = img.dim();
        let x5 = concat_channels(img, &coord_channels(h, w));
        let z1 = self.conv1.forward(&x5);
        let e1 = leaky_relu(&z1);
        let z2 = self.conv2.forward(&e1);
        let e2 = leaky_relu(&z2);
        let z3 = self.conv3.forward(&e2);
        let m = leaky_relu(&z3);
        let d = upsample2(&m);
        let cat = concat_channels(&d, &e1);
        let z4 = self.conv4.forward(&cat);
        let out = sigmoid(&z4);
        (
            out.clone(),
            GenCache {
                x5,
                z1,
                e1,
                z2,
                e2,
                z3,
                cat,
                out,
            },
        )
    }

    pub fn forward(&self, img: &Tensor) -> Tensor {
        self.forward_cached(img).0
    }

    /// Backward from d(loss)/d(output); returns parameter gradients and the
    /// gradient with respect to the 3 image channels.
    pub fn backward(&self, cache: &GenCache, gout: &Tensor) -> (GenGrads, Tensor) {
        let gz4 = sigmoid_backward(&cache.out, gout);
        let (gcat, gw4, gb4) = self.conv4.backward(&cache.cat, &gz4);
        let (gd, ge1_skip) = split_channels(&gcat, GEN_C2);
        let gm = upsample2_backward(&gd);
        let gz3 = leaky_relu_backward(&cache.z3, &gm);
        let (ge2, gw3, gb3) = self.conv3.backward(&cache.e2, &gz3);
        let gz2 = leaky_relu_backward(&cache.z2, &ge2);
        let (ge1_main, gw2, gb2) = self.conv2.backward(&cache.e1, &gz2);
        let ge1 = &ge1_main + &ge1_skip;
        let gz1 = leaky_relu_backward(&cache.z1, &ge1);
        let (gx5, gw1, gb1) = self.conv1.backward(&cache.x5, &gz1);
        let (gin, _coords) = split_channels(&gx5, 3);
        let mut flat = Vec::new();
        for (gw, gb) in [(gw1, gb1), (gw2, gb2), (gw3, gb3), (gw4, gb4)] {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        (GenGrads { flat }, gin)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in [&self.conv1, &self.conv2, &self.conv3, &self.conv4] {
            out.extend(c.w.iter());
            out.extend(c.b.iter());
        }
        out
    }

    pub fn load_flat(&mut self, data: &[f64]) -> Result<()> {
        load_convs(
            [&mut self.conv1, &mut self.conv2, &mut self.conv3, &mut self.conv4],
            data,
        )
    }
}

impl GenGrads {
    pub fn flat(&self) -> &[f64] {
        &self.flat
    }
}

/// Patch discriminator: two stride-2 stages then a 1-channel logit map over
/// coarse patches. `c_in` is 6 for conditional (input||target) pairs and 3
/// for the unconditional variant.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DiscriminatorNet {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    pub c_in: usize,
}

pub(crate) struct DiscCache {
    x: Tensor,
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    a2: Tensor,
    pub logits: Tensor,
}

pub(crate) struct DiscGrads {
    flat: Vec<f64>,
}

impl DiscriminatorNet {
    pub fn new(c_in: usize, rng: &mut ChaCha8Rng) -> Self {
        DiscriminatorNet {
            conv1: Conv2d::new(c_in, DISC_C1, 3, 2, rng),
            conv2: Conv2d::new(DISC_C1, DISC_C2, 3, 2, rng),
            conv3: Conv2d::new(DISC_C2, 1, 3, 1, rng),
            c_in,
        }
    }

    pub fn forward_cached(&self, x: &Tensor) -> DiscCache {
        let z1 = self.conv1.forward(x);
        let a1 = leaky_relu(&z1);
        let z2 = self.conv2.forward(&a1);
        let a2 = leaky_relu(&z2);
        let logits = self.conv3.forward(&a2);
        DiscCache {
            x: x.clone(),
            z1,
            a1,
            z2,
            a2,
            logits,
        }
    }

    /// Single realness score: sigmoid of the mean patch logit. Lies in the
    /// open interval (0, 1).
    pub fn score(&self, x: &Tensor) -> f64 {
        let cache = self.forward_cached(x);
        super::nn::sigmoid_scalar(cache.logits.mean().unwrap())
    }

    /// Backward from d(loss)/d(logit map).
    pub fn backward(&self, cache: &DiscCache, glogits: &Tensor) -> (DiscGrads, Tensor) {
        let (ga2, gw3, gb3) = self.conv3.backward(&cache.a2, glogits);
        let gz2 = leaky_relu_backward(&cache.z2, &ga2);
        let (ga1, gw2, gb2) = self.conv2.backward(&cache.a1, &gz2);
        let gz1 = leaky_relu_backward(&cache.z1, &ga1);
        let (gin, gw1, gb1) = self.conv1.backward(&cache.x, &gz1);
        let mut flat = Vec::new();
        for (gw, gb) in [(gw1, gb1), (gw2, gb2), (gw3, gb3)] {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        (DiscGrads { flat }, gin)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in [&self.conv1, &self.conv2, &self.conv3] {
            out.extend(c.w.iter());
            out.extend(c.b.iter());
        }
        out
    }

    pub fn load_flat(&mut self, data: &[f64]) -> Result<()> {
        load_convs_3([&mut self.conv1, &mut self.conv2, &mut self.conv3], data)
    }
}

impl DiscGrads {
    pub fn flat(&self) -> &[f64] {
        &self.flat
    }
}

/// Small convolutional classifier: two stride-2 stages, global average
/// pooling, one linear head.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ClassifierNet {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Linear,
    pub num_classes: usize,
}

pub(crate) struct ClfCache {
    x: Tensor,
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    a2: Tensor,
    g: Array1<f64>,
    pub logits: Array1<f64>,
}

pub(crate) struct ClfGrads {
    flat: Vec<f64>,
}

impl ClassifierNet {
    pub fn new(num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        ClassifierNet {
            conv1: Conv2d::new(3, CLF_C1, 3, 2, rng),
            conv2: Conv2d::new(CLF_C1, CLF_C2, 3, 2, rng),
            fc: Linear::new(CLF_C2, num_classes, rng),
            num_classes,
        }
    }

    pub fn forward_cached(&self, x: &Tensor) -> ClfCache {
        let z1 = self.conv1.forward(x);
        let a1 = leaky_relu(&z1);
        let z2 = self.conv2.forward(&a1);
        let a2 = leaky_relu(&z2);
        let g = global_avg_pool(&a2);
        let logits = self.fc.forward(&g);
        ClfCache {
            x: x.clone(),
            z1,
            a1,
            z2,
            a2,
            g,
            logits,
        }
    }

    pub fn backward(&self, cache: &ClfCache, glogits: &Array1<f64>) -> (ClfGrads, Tensor) {
        let (gg, gw_fc, gb_fc) = self.fc.backward(&cache.g, glogits);
        let ga2 = global_avg_pool_backward(&gg, cache.a2.dim());
        let gz2 = leaky_relu_backward(&cache.z2, &ga2);
        let (ga1, gw2, gb2) = self.conv2.backward(&cache.a1, &gz2);
        let gz1 = leaky_relu_backward(&cache.z1, &ga1);
        let (gin, gw1, gb1) = self.conv1.backward(&cache.x, &gz1);
        let mut flat = Vec::new();
        for (gw, gb) in [(gw1, gb1), (gw2, gb2)] {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        flat.extend(gw_fc.iter());
        flat.extend(gb_fc.iter());
        (ClfGrads { flat }, gin)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in [&self.conv1, &self.conv2] {
            out.extend(c.w.iter());
            out.extend(c.b.iter());
        }
        out.extend(self.fc.w.iter());
        out.extend(self.fc.b.iter());
        out
    }

    pub fn load_flat(&mut self, data: &[f64]) -> Result<()> {
        let mut off = 0;
        for c in [&mut self.conv1, &mut self.conv2] {
            off = load_conv(c, data, off)?;
        }
        let nw = self.fc.w.len();
        let nb = self.fc.b.len();
        if data.len() != off + nw + nb {
            return Err(Error::Container(format!(
                "parameter vector length {} does not fit architecture (need {})",
                data.len(),
                off + nw + nb
            )));
        }
        self.fc
            .w
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(&data[off..off + nw]);
        self.fc
            .b
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(&data[off + nw..]);
        Ok(())
    }
}

impl ClfGrads {
    pub fn flat(&self) -> &[f64] {
        &self.flat
    }
}

fn load_conv(c: &mut Conv2d, data: &[f64], off: usize) -> Result<usize> {
    let nw = c.w.len();
    let nb = c.b.len();
    if data.len() < off + nw + nb {
        return Err(Error::Container(format!(
            "parameter vector too short: need at least {}, have {}",
            off + nw + nb,
            data.len()
        )));
    }
    c.w.as_slice_mut()
        .unwrap()
        .copy_from_slice(&data[off..off + nw]);
    c.b.as_slice_mut()
        .unwrap()
        .copy_from_slice(&data[off + nw..off + nw + nb]);
    Ok(off + nw + nb)
}

fn load_convs(convs: [&mut Conv2d; 4], data: &[f64]) -> Result<()> {
    let mut off = 0;
    for c in convs {
        off = load_conv(c, data, off)?;
    }
    if off != data.len() {
        return Err(Error::Container(format!(
            "parameter vector length {} does not fit architecture (need {off})",
            data.len()
        )));
    }
    Ok(())
}

fn load_convs_3(convs: [&mut Conv2d; 3], data: &[f64]) -> Result<()> {
    let mut off = 0;
    for c in convs {
        off = load_conv(c, data, off)?;
    }
    if off != data.len() {
        return Err(Error::Container(format!(
            "parameter vector length {} does not fit architecture (need {off})",
            data.len()
        )));
    }
    Ok(())
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
