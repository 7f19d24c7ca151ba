//! Image comparison metrics: PSNR, a pluggable perceptual distance, and
//! segmentation scoring for label renderings.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image_buffer::ImageBuffer;
use crate::models::nn::{global_avg_pool, leaky_relu, Conv2d};
use crate::models::{image_to_chw, Tensor};

/// Peak signal-to-noise ratio in dB for unit-range images, capped at 99.0
/// so identical images stay finite and line up in reports.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let n = a.as_array().len() as f64;
    let mut acc = 0.0;
    for (x, y) in a.as_array().iter().zip(b.as_array().iter()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / n)
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Perceptual dissimilarity between two images of equal shape. Returns 0
/// for identical inputs, is symmetric, and grows with visual difference.
pub trait PerceptualDistance {
    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64>;
    fn name(&self) -> &'static str;
}

/// Default perceptual metric: the mean of a multi-scale structural
/// dissimilarity term and a normalized distance between descriptors from a
/// fixed random convolutional feature extractor. Both terms lie in [0, 1].
pub struct DefaultPerceptual {
    conv1: Conv2d,
    conv2: Conv2d,
}

/// Seed for the fixed feature extractor; part of the metric's definition.
const FEATURE_SEED: u64 = 0x5EED_FEA7;

impl DefaultPerceptual {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(FEATURE_SEED);
        DefaultPerceptual {
            conv1: Conv2d::new(3, 8, 3, 2, &mut rng),
            conv2: Conv2d::new(8, 16, 3, 2, &mut rng),
        }
    }

    fn features(&self, img: &ImageBuffer) -> Vec<f64> {
        let t: Tensor = image_to_chw(img);
        let a1 = leaky_relu(&self.conv1.forward(&t));
        let a2 = leaky_relu(&self.conv2.forward(&a1));
        global_avg_pool(&a2).to_vec()
    }
}

impl Default for DefaultPerceptual {
    fn default() -> Self {
        Self::new()
    }
}

impl PerceptualDistance for DefaultPerceptual {
    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
        if a.dim() != b.dim() {
            return Err(Error::dim(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
        }
        let structural = ms_dssim(a, b)?;
        let fa = self.features(a);
        let fb = self.features(b);
        let num: f64 = fa
            .iter()
            .zip(&fb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den = l2(&fa) + l2(&fb) + 1e-12;
        let feat = num / den;
        Ok(0.5 * (structural + feat))
    }

    fn name(&self) -> &'static str {
        "msdssim+randfeat"
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rec. 601 luminance; single-channel images pass through.
fn luminance(img: &ImageBuffer) -> Array2<f64> {
    let (h, w, c) = img.dim();
    let a = img.as_array();
    Array2::from_shape_fn((h, w), |(v, u)| {
        if c == 1 {
            a[(v, u, 0)]
        } else {
            0.299 * a[(v, u, 0)] + 0.587 * a[(v, u, 1)] + 0.114 * a[(v, u, 2)]
        }
    })
}

fn downsample2(l: &Array2<f64>) -> Array2<f64> {
    let (h, w) = l.dim();
    let (oh, ow) = (h / 2, w / 2);
    Array2::from_shape_fn((oh, ow), |(v, u)| {
        0.25 * (l[(2 * v, 2 * u)]
            + l[(2 * v, 2 * u + 1)]
            + l[(2 * v + 1, 2 * u)]
            + l[(2 * v + 1, 2 * u + 1)])
    })
}

const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM over all valid 7x7 windows; `None` when the plane is smaller
/// than one window.
fn ssim_mean(a: &Array2<f64>, b: &Array2<f64>) -> Option<f64> {
    let (h, w) = a.dim();
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return None;
    }
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for v0 in 0..=h - k {
        for u0 in 0..=w - k {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dv in 0..k {
                for du in 0..k {
                    let x = a[(v0 + dv, u0 + du)];
                    let y = b[(v0 + dv, u0 + du)];
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let mu_a = sa / n;
            let mu_b = sb / n;
            let var_a = (saa / n - mu_a * mu_a).max(0.0);
            let var_b = (sbb / n - mu_b * mu_b).max(0.0);
            let cov = sab / n - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            total += s;
            count += 1;
        }
    }
    Some(total / count as f64)
}

/// Multi-scale structural dissimilarity in [0, 1]: the luminance planes are
/// compared at full, half, and quarter resolution (skipping scales smaller
/// than the SSIM window) and the dissimilarities (1 - ssim) / 2 averaged.
pub fn ms_dssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let mut la = luminance(a);
    let mut lb = luminance(b);
    let mut terms = Vec::new();
    for scale in 0..3 {
        if let Some(s) = ssim_mean(&la, &lb) {
            terms.push((1.0 - s) / 2.0);
        }
        if scale < 2 {
            la = downsample2(&la);
            lb = downsample2(&lb);
        }
    }
    if terms.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "images of {:?} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} structural window",
            a.dim()
        )));
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Per-pixel nearest-palette-color labeling; ties go to the smaller class
/// index. This turns a (possibly degraded) label rendering back into a
/// segmentation map.
pub fn label_outputs(img: &ImageBuffer, palette: &[[f64; 3]]) -> Result<Array2<u8>> {
    if palette.is_empty() || palette.len() > 256 {
        return Err(Error::InvalidArgument(format!(
            "palette must hold 1..=256 colors, got {}",
            palette.len()
        )));
    }
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(Error::dim("3-channel image".to_string(), format!("{c} channels")));
    }
    let a = img.as_array();
    let mut out = Array2::zeros((h, w));
    for v in 0..h {
        for u in 0..w {
            let px = [a[(v, u, 0)], a[(v, u, 1)], a[(v, u, 2)]];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, col) in palette.iter().enumerate() {
                let d = (px[0] - col[0]).powi(2)
                    + (px[1] - col[1]).powi(2)
                    + (px[2] - col[2]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            out[(v, u)] = best as u8;
        }
    }
    Ok(out)
}

/// Segmentation quality of a predicted label map against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegScores {
    /// Fraction of pixels labeled correctly.
    pub per_pixel_acc: f64,
    /// Mean per-class recall over the classes present in the ground truth.
    pub per_class_acc: f64,
    /// Mean intersection-over-union over the classes present in the ground
    /// truth.
    pub class_iou: f64,
}

pub fn seg_scores(pred: &Array2<u8>, truth: &Array2<u8>, num_classes: usize) -> Result<SegScores> {
    if pred.dim() != truth.dim() {
        return Err(Error::dim(
            format!("{:?}", truth.dim()),
            format!("{:?}", pred.dim()),
        ));
    }
    if num_classes == 0 || num_classes > 256 {
        return Err(Error::InvalidArgument(format!(
            "num_classes must lie in 1..=256, got {num_classes}"
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("empty label maps".into()));
    }
    let k = num_classes;
    let mut confusion = vec![0usize; k * k];
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        if (p as usize) >= k || (t as usize) >= k {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {k} classes",
                p.max(t)
            )));
        }
        confusion[t as usize * k + p as usize] += 1;
    }
    let total = truth.len();
    let correct: usize = (0..k).map(|c| confusion[c * k + c]).sum();

    let mut recall_sum = 0.0;
    let mut iou_sum = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        let truth_c: usize = (0..k).map(|p| confusion[c * k + p]).sum();
        if truth_c == 0 {
            continue;
        }
        present += 1;
        let pred_c: usize = (0..k).map(|t| confusion[t * k + c]).sum();
        let tp = confusion[c * k + c];
        recall_sum += tp as f64 / truth_c as f64;
        let union = truth_c + pred_c - tp;
        iou_sum += tp as f64 / union as f64;
    }
    Ok(SegScores {
        per_pixel_acc: correct as f64 / total as f64,
        per_class_acc: recall_sum / present as f64,
        class_iou: iou_sum / present as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};
    use rand::Rng;

    fn noisy(img: &ImageBuffer, amp: f64, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = img.as_array();
        ImageBuffer::from_array_clamped(Array3::from_shape_fn(a.dim(), |i| {
            a[i] + rng.random_range(-amp..amp)
        }))
        .unwrap()
    }

    fn gradient_image(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_array(Array3::from_shape_fn((h, w, 3), |(v, u, c)| {
            (0.2 + 0.6 * (u as f64 / w as f64) + 0.15 * (v as f64 / h as f64)
                + 0.05 * c as f64)
                .min(1.0)
        }))
        .unwrap()
    }

    #[test]
    fn psnr_of_identical_images_is_capped() {
        let a = gradient_image(8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_of_known_uniform_offset() {
        let a = ImageBuffer::constant(8, 8, 3, 0.2).unwrap();
        let b = ImageBuffer::constant(8, 8, 3, 0.3).unwrap();
        // mse = 0.01 exactly, so psnr = 20 dB
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert!(psnr(&a, &ImageBuffer::constant(4, 8, 3, 0.3).unwrap()).is_err());
    }

    #[test]
    fn ms_dssim_is_zero_on_identity_and_detects_inversion() {
        let a = gradient_image(16, 16);
        assert!(ms_dssim(&a, &a).unwrap().abs() < 1e-12);
        let inverted = ImageBuffer::from_array(a.as_array().mapv(|v| 1.0 - v)).unwrap();
        let d = ms_dssim(&a, &inverted).unwrap();
        assert!(d > 0.2, "inversion should score clearly dissimilar, got {d}");
        let tiny = ImageBuffer::constant(4, 4, 3, 0.5).unwrap();
        assert!(ms_dssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn perceptual_distance_is_symmetric_zero_based_and_monotone() {
        let metric = DefaultPerceptual::new();
        let a = gradient_image(16, 16);
        assert_eq!(metric.distance(&a, &a).unwrap(), 0.0);
        let n1 = noisy(&a, 0.05, 1);
        let n2 = noisy(&a, 0.2, 1);
        let n3 = noisy(&a, 0.45, 1);
        let d1 = metric.distance(&a, &n1).unwrap();
        let d2 = metric.distance(&a, &n2).unwrap();
        let d3 = metric.distance(&a, &n3).unwrap();
        assert!((metric.distance(&n2, &a).unwrap() - d2).abs() < 1e-15);
        assert!(d1 > 0.0);
        assert!(d1 < d2 && d2 < d3, "expected monotone growth: {d1} {d2} {d3}");
    }

    #[test]
    fn label_outputs_recovers_exact_palette_and_breaks_ties_low() {
        let palette = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let img = ImageBuffer::from_array(Array3::from_shape_fn((2, 3, 3), |(v, u, c)| {
            palette[(v * 3 + u) % 3][c]
        }))
        .unwrap();
        let labels = label_outputs(&img, &palette).unwrap();
        for v in 0..2 {
            for u in 0..3 {
                assert_eq!(labels[(v, u)] as usize, (v * 3 + u) % 3);
            }
        }
        // equidistant between classes 0 and 1 -> smaller index wins
        let tie = ImageBuffer::constant(1, 1, 3, 0.0).unwrap();
        let tie = ImageBuffer::from_array({
            let mut a = tie.as_array().to_owned();
            a[(0, 0, 0)] = 0.5;
            a
        })
        .unwrap();
        assert_eq!(label_outputs(&tie, &palette).unwrap()[(0, 0)], 0);
    }

    #[test]
    fn seg_scores_hand_case() {
        let truth = arr2(&[[0u8, 0], [1, 1]]);
        let pred = arr2(&[[0u8, 1], [1, 1]]);
        let s = seg_scores(&pred, &truth, 2).unwrap();
        assert!((s.per_pixel_acc - 0.75).abs() < 1e-15);
        assert!((s.per_class_acc - 0.75).abs() < 1e-15);
        assert!((s.class_iou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn seg_scores_ignore_absent_classes_and_validate_labels() {
        let truth = arr2(&[[1u8, 1], [1, 1]]);
        let pred = arr2(&[[1u8, 2], [1, 1]]);
        let s = seg_scores(&pred, &truth, 4).unwrap();
        assert!((s.per_class_acc - 0.75).abs() < 1e-15);
        assert!((s.class_iou - 0.75).abs() < 1e-15);
        assert!(seg_scores(&pred, &truth, 2).is_err());
        let short = arr2(&[[1u8, 1]]);
        assert!(seg_scores(&short, &truth, 4).is_err());
    }

    #[test]
    fn perfect_prediction_scores_ones() {
        let truth = arr2(&[[0u8, 1, 2], [2, 1, 0]]);
        let s = seg_scores(&truth, &truth, 3).unwrap();
        assert_eq!(s.per_pixel_acc, 1.0);
        assert_eq!(s.per_class_acc, 1.0);
        assert_eq!(s.class_iou, 1.0);
    }
}
