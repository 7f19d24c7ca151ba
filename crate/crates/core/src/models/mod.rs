//! Image-to-image translation models and the toy classifier, with
//! deterministic construction, checkpointing, and gradient access for the
//! attack optimizers.
//!
//! Everything here is CPU-only f64. The nets are deliberately small; they
//! train in seconds on tiny synthetic scenes while still exhibiting the
//! behaviors the attack evaluations measure.

mod nets;
pub(crate) mod nn;
pub mod objective;
pub mod train;

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use crate::container::{load_vec, save_vec};
use crate::error::{Error, Result};
use crate::image_buffer::ImageBuffer;
pub(crate) use nets::{ClassifierNet, DiscriminatorNet, GeneratorNet};
pub(crate) use nn::Tensor;

pub const ARCH_IM2IM_PAIRED: &str = "im2im-paired-v1";
pub const ARCH_IM2IM_CYCLE: &str = "im2im-cycle-v1";
pub const ARCH_CLASSIFIER: &str = "toy-classifier-v1";

/// Provenance carried with every checkpoint so experiment reports can state
/// exactly how a model was produced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingMeta {
    pub dataset: String,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Human-readable description of any perturbation applied to the
    /// training targets; "none" for clean training.
    pub target_attack: String,
    #[serde(default)]
    pub final_loss: Option<f64>,
}

impl TrainingMeta {
    pub fn untrained() -> Self {
        TrainingMeta {
            dataset: "none".into(),
            epochs: 0,
            seed: 0,
            learning_rate: 0.0,
            target_attack: "none".into(),
            final_loss: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum ModelKind {
    Paired {
        gen: GeneratorNet,
        disc: DiscriminatorNet,
    },
    Cycle {
        gen_ab: GeneratorNet,
        gen_ba: GeneratorNet,
        disc_a: DiscriminatorNet,
        disc_b: DiscriminatorNet,
    },
}

/// A trained (or freshly initialized) translation model operating on fixed
/// spatial dimensions.
#[derive(Debug, Clone)]
pub struct Im2ImModel {
    pub(crate) kind: ModelKind,
    pub meta: TrainingMeta,
    height: usize,
    width: usize,
}

fn check_model_dims(height: usize, width: usize) -> Result<()> {
    if height < 8 || width < 8 || height % 4 != 0 || width % 4 != 0 {
        return Err(Error::Config(format!(
            "model dimensions must be multiples of 4 and at least 8, got {height}x{width}"
        )));
    }
    Ok(())
}

impl Im2ImModel {
    pub fn untrained_paired(height: usize, width: usize, seed: u64) -> Result<Self> {
        check_model_dims(height, width)?;
        let mut rng = nets::seeded_rng(seed);
        Ok(Im2ImModel {
            kind: ModelKind::Paired {
                gen: GeneratorNet::new(&mut rng),
                disc: DiscriminatorNet::new(6, &mut rng),
            },
            meta: TrainingMeta::untrained(),
            height,
            width,
        })
    }

    pub fn untrained_cycle(height: usize, width: usize, seed: u64) -> Result<Self> {
        check_model_dims(height, width)?;
        let mut rng = nets::seeded_rng(seed);
        Ok(Im2ImModel {
            kind: ModelKind::Cycle {
                gen_ab: GeneratorNet::new(&mut rng),
                gen_ba: GeneratorNet::new(&mut rng),
                disc_a: DiscriminatorNet::new(3, &mut rng),
                disc_b: DiscriminatorNet::new(3, &mut rng),
            },
            meta: TrainingMeta::untrained(),
            height,
            width,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn architecture(&self) -> &'static str {
        match self.kind {
            ModelKind::Paired { .. } => ARCH_IM2IM_PAIRED,
            ModelKind::Cycle { .. } => ARCH_IM2IM_CYCLE,
        }
    }

    pub fn is_cycle(&self) -> bool {
        matches!(self.kind, ModelKind::Cycle { .. })
    }

    pub(crate) fn check_input(&self, img: &ImageBuffer) -> Result<()> {
        if img.height() != self.height || img.width() != self.width || img.channels() != 3 {
            return Err(Error::dim(
                format!("{}x{}x3 image", self.height, self.width),
                format!("{}x{}x{}", img.height(), img.width(), img.channels()),
            ));
        }
        Ok(())
    }

    pub(crate) fn forward_generator(&self) -> &GeneratorNet {
        match &self.kind {
            ModelKind::Paired { gen, .. } => gen,
            ModelKind::Cycle { gen_ab, .. } => gen_ab,
        }
    }

    /// Translate an input-domain image to the target domain.
    pub fn generate(&self, input: &ImageBuffer) -> Result<ImageBuffer> {
        self.check_input(input)?;
        let out = self.forward_generator().forward(&image_to_chw(input));
        chw_to_image_clamped(&out)
    }

    /// Realness score in (0, 1) the discriminator assigns to `target`
    /// (conditioned on `input` for paired models; the cycle variant judges
    /// the target image alone).
    pub fn discriminator_score(&self, input: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
        self.check_input(input)?;
        self.check_input(target)?;
        let y = image_to_chw(target);
        Ok(match &self.kind {
            ModelKind::Paired { disc, .. } => {
                let x = image_to_chw(input);
                disc.score(&nn::concat_channels(&x, &y))
            }
            ModelKind::Cycle { disc_b, .. } => disc_b.score(&y),
        })
    }

    /// Hard real/fake decision at the conventional 0.5 threshold.
    pub fn discriminator_decision(&self, input: &ImageBuffer, target: &ImageBuffer) -> Result<bool> {
        Ok(self.discriminator_score(input, target)? >= 0.5)
    }

    /// Discriminator score together with its gradient with respect to the
    /// target image.
    pub(crate) fn disc_score_and_target_grad(
        &self,
        input: &Tensor,
        target: &Tensor,
    ) -> (f64, Tensor) {
        let (disc, joint) = match &self.kind {
            ModelKind::Paired { disc, .. } => (disc, true),
            ModelKind::Cycle { disc_b, .. } => (disc_b, false),
        };
        let d_in = if joint {
            nn::concat_channels(input, target)
        } else {
            target.clone()
        };
        let cache = disc.forward_cached(&d_in);
        let mean = cache.logits.mean().unwrap();
        let s = nn::sigmoid_scalar(mean);
        let n = cache.logits.len() as f64;
        let glog = Array3::from_elem(cache.logits.dim(), s * (1.0 - s) / n);
        let (_, gin) = disc.backward(&cache, &glog);
        let g_target = if joint {
            nn::split_channels(&gin, 3).1
        } else {
            gin
        };
        (s, g_target)
    }

    /// Full-chain score s = D(x, G(x)) and ds/dx, differentiating through
    /// both networks.
    pub(crate) fn gen_disc_score_and_input_grad(&self, input: &Tensor) -> (f64, Tensor) {
        let gen = self.forward_generator();
        let (y, gcache) = gen.forward_cached(input);
        let (disc, joint) = match &self.kind {
            ModelKind::Paired { disc, .. } => (disc, true),
            ModelKind::Cycle { disc_b, .. } => (disc_b, false),
        };
        let d_in = if joint {
            nn::concat_channels(input, &y)
        } else {
            y.clone()
        };
        let cache = disc.forward_cached(&d_in);
        let mean = cache.logits.mean().unwrap();
        let s = nn::sigmoid_scalar(mean);
        let n = cache.logits.len() as f64;
        let glog = Array3::from_elem(cache.logits.dim(), s * (1.0 - s) / n);
        let (_, gin_d) = disc.backward(&cache, &glog);
        let (gx_direct, gy) = if joint {
            let (a, b) = nn::split_channels(&gin_d, 3);
            (Some(a), b)
        } else {
            (None, gin_d)
        };
        let (_, gx_chain) = gen.backward(&gcache, &gy);
        let grad = match gx_direct {
            Some(d) => &d + &gx_chain,
            None => gx_chain,
        };
        (s, grad)
    }

    /// Generated output and the gradient of 0.5*||G(x) - reference||^2 / N
    /// with respect to x.
    pub(crate) fn gen_match_grad(&self, input: &Tensor, reference: &Tensor) -> (f64, Tensor) {
        let gen = self.forward_generator();
        let (y, cache) = gen.forward_cached(input);
        let n = y.len() as f64;
        let diff = &y - reference;
        let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / n;
        let gout = diff.mapv(|d| d / n);
        let (_, gin) = gen.backward(&cache, &gout);
        (loss, gin)
    }

    pub(crate) fn params_flat(&self) -> Vec<f64> {
        match &self.kind {
            ModelKind::Paired { gen, disc } => {
                let mut p = gen.params_flat();
                p.extend(disc.params_flat());
                p
            }
            ModelKind::Cycle {
                gen_ab,
                gen_ba,
                disc_a,
                disc_b,
            } => {
                let mut p = gen_ab.params_flat();
                p.extend(gen_ba.params_flat());
                p.extend(disc_a.params_flat());
                p.extend(disc_b.params_flat());
                p
            }
        }
    }

    pub(crate) fn load_params_flat(&mut self, data: &[f64]) -> Result<()> {
        match &mut self.kind {
            ModelKind::Paired { gen, disc } => {
                let ng = gen.params_flat().len();
                let nd = disc.params_flat().len();
                if data.len() != ng + nd {
                    return Err(Error::Container(format!(
                        "parameter vector length {} does not fit architecture (need {})",
                        data.len(),
                        ng + nd
                    )));
                }
                gen.load_flat(&data[..ng])?;
                disc.load_flat(&data[ng..])
            }
            ModelKind::Cycle {
                gen_ab,
                gen_ba,
                disc_a,
                disc_b,
            } => {
                let n1 = gen_ab.params_flat().len();
                let n2 = gen_ba.params_flat().len();
                let n3 = disc_a.params_flat().len();
                let n4 = disc_b.params_flat().len();
                if data.len() != n1 + n2 + n3 + n4 {
                    return Err(Error::Container(format!(
                        "parameter vector length {} does not fit architecture (need {})",
                        data.len(),
                        n1 + n2 + n3 + n4
                    )));
                }
                gen_ab.load_flat(&data[..n1])?;
                gen_ba.load_flat(&data[n1..n1 + n2])?;
                disc_a.load_flat(&data[n1 + n2..n1 + n2 + n3])?;
                disc_b.load_flat(&data[n1 + n2 + n3..])
            }
        }
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            architecture: self.architecture().into(),
            height: self.height,
            width: self.width,
            num_classes: None,
            param_count: self.params_flat().len(),
            training: self.meta.clone(),
        };
        save_manifest(&manifest, base)?;
        save_vec(&params_path(base), &self.params_flat())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let manifest = load_manifest(base)?;
        let mut model = match manifest.architecture.as_str() {
            ARCH_IM2IM_PAIRED => Im2ImModel::untrained_paired(manifest.height, manifest.width, 0)?,
            ARCH_IM2IM_CYCLE => Im2ImModel::untrained_cycle(manifest.height, manifest.width, 0)?,
            other => {
                return Err(Error::Container(format!(
                    "unknown model architecture {other:?}"
                )))
            }
        };
        let params = load_vec(&params_path(base))?;
        model.load_params_flat(params.as_slice().expect("loaded vectors are contiguous"))?;
        model.meta = manifest.training;
        Ok(model)
    }
}

/// A small image classifier used as the attacked downstream network.
#[derive(Debug, Clone)]
pub struct ToyClassifier {
    pub(crate) net: ClassifierNet,
    pub meta: TrainingMeta,
    height: usize,
    width: usize,
}

impl ToyClassifier {
    pub fn untrained(height: usize, width: usize, num_classes: usize, seed: u64) -> Result<Self> {
        check_model_dims(height, width)?;
        if !(2..=16).contains(&num_classes) {
            return Err(Error::Config(format!(
                "classifier supports 2..=16 classes, got {num_classes}"
            )));
        }
        let mut rng = nets::seeded_rng(seed);
        Ok(ToyClassifier {
            net: ClassifierNet::new(num_classes, &mut rng),
            meta: TrainingMeta::untrained(),
            height,
            width,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.net.num_classes
    }

    pub(crate) fn check_input(&self, img: &ImageBuffer) -> Result<()> {
        if img.height() != self.height || img.width() != self.width || img.channels() != 3 {
            return Err(Error::dim(
                format!("{}x{}x3 image", self.height, self.width),
                format!("{}x{}x{}", img.height(), img.width(), img.channels()),
            ));
        }
        Ok(())
    }

    pub fn logits(&self, img: &ImageBuffer) -> Result<Array1<f64>> {
        self.check_input(img)?;
        Ok(self.net.forward_cached(&image_to_chw(img)).logits)
    }

    /// Predicted class index; ties broken toward the smaller index.
    pub fn classify(&self, img: &ImageBuffer) -> Result<usize> {
        Ok(argmax_first(&self.logits(img)?))
    }

    pub fn class_probabilities(&self, img: &ImageBuffer) -> Result<Array1<f64>> {
        Ok(nn::softmax(&self.logits(img)?))
    }

    /// Logits plus the input gradient of every logit, for attack linearization.
    pub(crate) fn logits_with_input_grads(&self, x: &Tensor) -> (Array1<f64>, Vec<Tensor>) {
        let cache = self.net.forward_cached(x);
        let k = self.net.num_classes;
        let grads = (0..k)
            .map(|j| {
                let mut glog = Array1::zeros(k);
                glog[j] = 1.0;
                self.net.backward(&cache, &glog).1
            })
            .collect();
        (cache.logits, grads)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            architecture: ARCH_CLASSIFIER.into(),
            height: self.height,
            width: self.width,
            num_classes: Some(self.net.num_classes),
            param_count: self.net.params_flat().len(),
            training: self.meta.clone(),
        };
        save_manifest(&manifest, base)?;
        save_vec(&params_path(base), &self.net.params_flat())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let manifest = load_manifest(base)?;
        if manifest.architecture != ARCH_CLASSIFIER {
            return Err(Error::Container(format!(
                "expected a classifier checkpoint, found {:?}",
                manifest.architecture
            )));
        }
        let k = manifest.num_classes.ok_or_else(|| {
            Error::Container("classifier manifest is missing num_classes".into())
        })?;
        let mut clf = ToyClassifier::untrained(manifest.height, manifest.width, k, 0)?;
        let params = load_vec(&params_path(base))?;
        clf.net
            .load_flat(params.as_slice().expect("loaded vectors are contiguous"))?;
        clf.meta = manifest.training;
        Ok(clf)
    }
}

pub(crate) fn argmax_first(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

const MANIFEST_FORMAT: &str = "model-manifest-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    architecture: String,
    height: usize,
    width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    param_count: usize,
    training: TrainingMeta,
}

fn manifest_path(base: &Path) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn params_path(base: &Path) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".params.fbc");
    PathBuf::from(p)
}

fn save_manifest(manifest: &Manifest, base: &Path) -> Result<()> {
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(manifest_path(base), text)?;
    Ok(())
}

fn load_manifest(base: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(manifest_path(base))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Container(format!(
            "unsupported manifest format {:?}",
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Convert an image to a (C, H, W) tensor; single-channel images are
/// replicated to three channels.
pub(crate) fn image_to_chw(img: &ImageBuffer) -> Tensor {
    let (h, w, c) = img.dim();
    let a = img.as_array();
    Array3::from_shape_fn((3, h, w), |(ch, v, u)| {
        if c == 1 {
            a[(v, u, 0)]
        } else {
            a[(v, u, ch)]
        }
    })
}

/// Back to image layout, clamping to [0, 1] to absorb float round-off.
pub(crate) fn chw_to_image_clamped(t: &Tensor) -> Result<ImageBuffer> {
    let (c, h, w) = t.dim();
    if c != 3 && c != 1 {
        return Err(Error::dim(
            format!("1- or 3-channel tensor of {h}x{w}"),
            format!("{c}x{h}x{w}"),
        ));
    }
    let arr = ndarray::Array3::from_shape_fn((h, w, c), |(v, u, ch)| t[(ch, v, u)]);
    ImageBuffer::from_array_clamped(arr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3 as A3;

    fn test_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        use rand::Rng;
        let mut rng = nets::seeded_rng(seed);
        ImageBuffer::from_array(A3::from_shape_fn((h, w, 3), |_| rng.random_range(0.0..1.0)))
            .unwrap()
    }

    #[test]
    fn untrained_paired_model_generates_valid_images() {
        let m = Im2ImModel::untrained_paired(8, 12, 3).unwrap();
        let x = test_image(8, 12, 1);
        let y = m.generate(&x).unwrap();
        assert_eq!(y.dim(), (8, 12, 3));
        let s = m.discriminator_score(&x, &y).unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let m = Im2ImModel::untrained_paired(8, 8, 3).unwrap();
        let x = test_image(8, 12, 1);
        assert!(matches!(
            m.generate(&x),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Im2ImModel::untrained_paired(10, 8, 3).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("models/m0");
        let mut m = Im2ImModel::untrained_paired(8, 8, 42).unwrap();
        m.meta.dataset = "demo".into();
        m.meta.epochs = 3;
        m.save(&base).unwrap();
        let m2 = Im2ImModel::load(&base).unwrap();
        assert_eq!(m2.meta, m.meta);
        assert_eq!(m2.params_flat(), m.params_flat());
        let x = test_image(8, 8, 7);
        assert_eq!(
            m.generate(&x).unwrap().as_array(),
            m2.generate(&x).unwrap().as_array()
        );
    }

    #[test]
    fn cycle_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("cyc");
        let m = Im2ImModel::untrained_cycle(8, 8, 5).unwrap();
        m.save(&base).unwrap();
        let m2 = Im2ImModel::load(&base).unwrap();
        assert!(m2.is_cycle());
        assert_eq!(m2.params_flat(), m.params_flat());
    }

    #[test]
    fn classifier_checkpoint_and_tie_break() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("clf");
        let c = ToyClassifier::untrained(8, 8, 4, 9).unwrap();
        c.save(&base).unwrap();
        let c2 = ToyClassifier::load(&base).unwrap();
        let x = test_image(8, 8, 2);
        assert_eq!(c.classify(&x).unwrap(), c2.classify(&x).unwrap());
        let probs = c.class_probabilities(&x).unwrap();
        assert!((probs.sum() - 1.0).abs() < 1e-12);

        let tied = Array1::from(vec![1.0, 3.0, 3.0, 0.0]);
        assert_eq!(argmax_first(&tied), 1);
    }

    #[test]
    fn manifest_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        let m = Im2ImModel::untrained_paired(8, 8, 1).unwrap();
        m.save(&base).unwrap();
        assert!(ToyClassifier::load(&base).is_err());
    }

    #[test]
    fn disc_target_gradient_matches_finite_differences() {
        let m = Im2ImModel::untrained_paired(8, 8, 11).unwrap();
        let x = image_to_chw(&test_image(8, 8, 3));
        let y = image_to_chw(&test_image(8, 8, 4));
        let (s, g) = m.disc_score_and_target_grad(&x, &y);
        assert!(s > 0.0 && s < 1.0);
        let h = 1e-5;
        let score_at = |y: &Tensor| m.disc_score_and_target_grad(&x, y).0;
        for &(c, v, u) in &[(0usize, 1usize, 1usize), (2, 6, 3)] {
            let mut yp = y.clone();
            yp[(c, v, u)] += h;
            let mut ym = y.clone();
            ym[(c, v, u)] -= h;
            let fd = (score_at(&yp) - score_at(&ym)) / (2.0 * h);
            assert!(
                (fd - g[(c, v, u)]).abs() <= 1e-8 + 1e-4 * fd.abs(),
                "fd {fd} vs {}",
                g[(c, v, u)]
            );
        }
    }

    #[test]
    fn full_chain_input_gradient_matches_finite_differences() {
        let m = Im2ImModel::untrained_paired(8, 8, 13).unwrap();
        let x = image_to_chw(&test_image(8, 8, 5));
        let (s, g) = m.gen_disc_score_and_input_grad(&x);
        assert!(s > 0.0 && s < 1.0);
        let h = 1e-5;
        let score_at = |x: &Tensor| m.gen_disc_score_and_input_grad(x).0;
        for &(c, v, u) in &[(1usize, 2usize, 2usize), (0, 7, 7)] {
            let mut xp = x.clone();
            xp[(c, v, u)] += h;
            let mut xm = x.clone();
            xm[(c, v, u)] -= h;
            let fd = (score_at(&xp) - score_at(&xm)) / (2.0 * h);
            assert!(
                (fd - g[(c, v, u)]).abs() <= 1e-8 + 1e-4 * fd.abs(),
                "fd {fd} vs {}",
                g[(c, v, u)]
            );
        }
    }

    #[test]
    fn match_gradient_matches_finite_differences() {
        let m = Im2ImModel::untrained_paired(8, 8, 17).unwrap();
        let x = image_to_chw(&test_image(8, 8, 6));
        let r = image_to_chw(&test_image(8, 8, 7));
        let (_, g) = m.gen_match_grad(&x, &r);
        let h = 1e-5;
        let loss_at = |x: &Tensor| m.gen_match_grad(x, &r).0;
        let mut xp = x.clone();
        xp[(2, 4, 4)] += h;
        let mut xm = x.clone();
        xm[(2, 4, 4)] -= h;
        let fd = (loss_at(&xp) - loss_at(&xm)) / (2.0 * h);
        assert!((fd - g[(2, 4, 4)]).abs() <= 1e-8 + 1e-4 * fd.abs());
    }

    #[test]
    fn grayscale_input_is_replicated() {
        let img = ImageBuffer::constant(8, 8, 1, 0.3).unwrap();
        let t = image_to_chw(&img);
        assert_eq!(t.dim(), (3, 8, 8));
        assert!((t[(2, 4, 4)] - 0.3).abs() < 1e-15);
    }
}
