//! Synthetic paired datasets at desk scale.
//!
//! The `Shapes` task is a stand-in for paired label/photo translation:
//! inputs are flat-color renderings of randomly placed shapes (a toy
//! segmentation map), targets render the same shapes with per-class base
//! colors under a fixed procedural texture. The `Textures` task is a small
//! unpaired stand-in: stripe images in one style next to stripe images in
//! another, with no pixel correspondence.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_buffer::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Shapes,
    Textures,
}

impl Default for DatasetKind {
    fn default() -> Self {
        DatasetKind::Shapes
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(default)]
    pub kind: DatasetKind,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
    /// When set, the shape generator cycles class 0 into the rotation as
    /// pure-background images (no shapes at all), so classifiers trained on
    /// the data learn an "empty scene" class alongside the shape classes.
    #[serde(default)]
    pub background_examples: bool,
    #[serde(default)]
    pub name: Option<String>,
}

impl DatasetSpec {
    pub fn shapes(n: usize, height: usize, width: usize, classes: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Shapes,
            n,
            height,
            width,
            classes,
            seed,
            background_examples: false,
            name: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("dataset needs at least one pair".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "dataset needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.classes > 16 {
            return Err(Error::Config(format!(
                "palette supports at most 16 classes, got {}",
                self.classes
            )));
        }
        if !(8..=64).contains(&self.height) || !(8..=64).contains(&self.width) {
            return Err(Error::Config(format!(
                "image sides must lie in [8, 64], got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let kind = match self.kind {
                DatasetKind::Shapes => "shapes",
                DatasetKind::Textures => "textures",
            };
            format!(
                "{kind}-n{}-{}x{}-c{}-s{}",
                self.n, self.height, self.width, self.classes, self.seed
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub input: ImageBuffer,
    pub target: ImageBuffer,
    pub seg_labels: Array2<u8>,
}

/// Ordered, immutable collection of (input, target, labels) triples plus
/// the palettes used to render them. Iteration order is generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pairs: Vec<DatasetPair>,
    name: String,
    seed: u64,
    num_classes: usize,
    input_palette: Vec<[f64; 3]>,
    target_palette: Vec<[f64; 3]>,
}

impl PairedDataset {
    pub fn pairs(&self) -> &[DatasetPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Flat label colors used for input renderings, indexed by class.
    pub fn input_palette(&self) -> &[[f64; 3]] {
        &self.input_palette
    }

    /// Mean rendered color per class in the target domain, for
    /// nearest-color labeling of generated outputs.
    pub fn target_palette(&self) -> &[[f64; 3]] {
        &self.target_palette
    }

    pub fn image_dim(&self) -> (usize, usize, usize) {
        self.pairs[0].input.dim()
    }

    /// Borrowing view of a contiguous index range.
    pub fn slice(&self, start: usize, len: usize) -> Result<Vec<&DatasetPair>> {
        if start + len > self.pairs.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of range (len {})",
                start + len,
                self.pairs.len()
            )));
        }
        Ok(self.pairs[start..start + len].iter().collect())
    }
}

/// Class with the most pixels among shape classes (class 0 is background
/// and only wins when nothing else is present). Ties go to the smaller id.
pub fn dominant_shape_class(seg: &Array2<u8>, num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for &c in seg.iter() {
        counts[c as usize] += 1;
    }
    let mut best = 0;
    let mut best_count = 0;
    for (c, &n) in counts.iter().enumerate().skip(1) {
        if n > best_count {
            best = c;
            best_count = n;
        }
    }
    best
}

pub fn make_synthetic_dataset(spec: &DatasetSpec) -> Result<PairedDataset> {
    spec.validate()?;
    match spec.kind {
        DatasetKind::Shapes => make_shapes(spec),
        DatasetKind::Textures => make_textures(spec),
    }
}

/// Procedural texture factor applied to target base colors; the 0.925 mean
/// is what `target_palette` reports per class.
fn texture_factor(u: usize, v: usize) -> f64 {
    let s = 0.5 + 0.5 * ((u as f64 + 2.0 * v as f64) * std::f64::consts::TAU / 13.0).sin();
    0.85 + 0.15 * s
}

const TEXTURE_MEAN_FACTOR: f64 = 0.925;

fn input_palette(classes: usize) -> Vec<[f64; 3]> {
    let mut pal = vec![[0.08, 0.08, 0.08]];
    for c in 1..classes {
        let hue = 360.0 * (c - 1) as f64 / (classes - 1) as f64;
        pal.push(hsv_to_rgb(hue, 0.85, 0.9));
    }
    pal
}

fn target_base_palette(classes: usize) -> Vec<[f64; 3]> {
    let mut pal = vec![[0.25, 0.22, 0.2]];
    for c in 1..classes {
        let hue = (360.0 * (c - 1) as f64 / (classes - 1) as f64 + 140.0) % 360.0;
        pal.push(hsv_to_rgb(hue, 0.55, 0.8));
    }
    pal
}

/// Standard HSV -> RGB conversion; h in degrees, s and v in [0, 1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let i = h.floor() as i64 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 of the pair index keeps per-image streams independent
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x1234_5678_9ABC_DEF1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy)]
enum ShapeGeom {
    Disc { cu: f64, cv: f64, r: f64 },
    Rect { cu: f64, cv: f64, a: f64, b: f64 },
}

impl ShapeGeom {
    fn covers(&self, u: usize, v: usize) -> bool {
        let (uf, vf) = (u as f64, v as f64);
        match *self {
            ShapeGeom::Disc { cu, cv, r } => {
                (uf - cu) * (uf - cu) + (vf - cv) * (vf - cv) <= r * r
            }
            ShapeGeom::Rect { cu, cv, a, b } => (uf - cu).abs() <= a && (vf - cv).abs() <= b,
        }
    }
}

fn make_shapes(spec: &DatasetSpec) -> Result<PairedDataset> {
    let (h, w, k) = (spec.height, spec.width, spec.classes);
    let in_pal = input_palette(k);
    let base_pal = target_base_palette(k);
    let mut pairs = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
        let mut seg = Array2::<u8>::zeros((h, w));
        // the first shape is large and carries a balanced class so the
        // dominant-class labels cover every shape class evenly; with
        // background examples enabled, class 0 joins the rotation as a
        // shape-free image
        let dominant = if spec.background_examples {
            i % k
        } else {
            1 + (i % (k - 1))
        };
        let mut shapes: Vec<(ShapeGeom, u8)> = Vec::new();
        if dominant != 0 {
            let n_extra = rng.random_range(1..=2usize);
            shapes.push((random_geom(&mut rng, h, w, 0.30, 0.42), dominant as u8));
            for _ in 0..n_extra {
                let class = rng.random_range(1..k) as u8;
                shapes.push((random_geom(&mut rng, h, w, 0.10, 0.16), class));
            }
        }
        for (geom, class) in &shapes {
            for v in 0..h {
                for u in 0..w {
                    if geom.covers(u, v) {
                        seg[(v, u)] = *class;
                    }
                }
            }
        }
        let input = ImageBuffer::from_fn(h, w, 3, |v, u, c| in_pal[seg[(v, u)] as usize][c])?;
        let target = ImageBuffer::from_fn(h, w, 3, |v, u, c| {
            base_pal[seg[(v, u)] as usize][c] * texture_factor(u, v)
        })?;
        pairs.push(DatasetPair {
            input,
            target,
            seg_labels: seg,
        });
    }
    let target_palette = base_pal
        .iter()
        .map(|c| [0, 1, 2].map(|i| c[i] * TEXTURE_MEAN_FACTOR))
        .collect();
    Ok(PairedDataset {
        pairs,
        name: spec.display_name(),
        seed: spec.seed,
        num_classes: k,
        input_palette: in_pal,
        target_palette,
    })
}

fn random_geom(rng: &mut ChaCha8Rng, h: usize, w: usize, min_frac: f64, max_frac: f64) -> ShapeGeom {
    let side = h.min(w) as f64;
    let r = side * rng.random_range(min_frac..max_frac);
    let cu = rng.random_range(0.2..0.8) * w as f64;
    let cv = rng.random_range(0.2..0.8) * h as f64;
    if rng.random_bool(0.5) {
        ShapeGeom::Disc { cu, cv, r }
    } else {
        ShapeGeom::Rect {
            cu,
            cv,
            a: r,
            b: r * rng.random_range(0.6..1.4),
        }
    }
}

/// Unpaired stripe-style task: inputs are one stripe family, targets
/// another; `classes` is forced to 2 by construction (stripe on/off).
fn make_textures(spec: &DatasetSpec) -> Result<PairedDataset> {
    let (h, w) = (spec.height, spec.width);
    if spec.classes != 2 {
        return Err(Error::Config(format!(
            "texture dataset is binary; classes must be 2, got {}",
            spec.classes
        )));
    }
    let in_pal = vec![[0.15, 0.2, 0.45], [0.85, 0.8, 0.35]];
    let tgt_pal = vec![[0.4, 0.12, 0.15], [0.35, 0.8, 0.75]];
    let mut pairs = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
        let phase_a = rng.random_range(0.0..std::f64::consts::TAU);
        let freq_a = rng.random_range(1.5..3.0);
        let phase_b = rng.random_range(0.0..std::f64::consts::TAU);
        let freq_b = rng.random_range(1.5..3.0);
        let stripe_a = |_u: usize, v: usize| {
            0.5 + 0.5 * (v as f64 / h as f64 * std::f64::consts::TAU * freq_a + phase_a).sin()
        };
        let stripe_b = |u: usize, v: usize| {
            0.5 + 0.5
                * ((u as f64 + v as f64) / w as f64 * std::f64::consts::TAU * freq_b + phase_b)
                    .sin()
        };
        let mut seg = Array2::<u8>::zeros((h, w));
        for v in 0..h {
            for u in 0..w {
                seg[(v, u)] = (stripe_a(u, v) >= 0.5) as u8;
            }
        }
        let input = ImageBuffer::from_fn(h, w, 3, |v, u, c| {
            let s = stripe_a(u, v);
            in_pal[0][c] * (1.0 - s) + in_pal[1][c] * s
        })?;
        let target = ImageBuffer::from_fn(h, w, 3, |v, u, c| {
            let s = stripe_b(u, v);
            tgt_pal[0][c] * (1.0 - s) + tgt_pal[1][c] * s
        })?;
        pairs.push(DatasetPair {
            input,
            target,
            seg_labels: seg,
        });
    }
    Ok(PairedDataset {
        pairs,
        name: spec.display_name(),
        seed: spec.seed,
        num_classes: 2,
        input_palette: in_pal,
        target_palette: tgt_pal,
    })
}
