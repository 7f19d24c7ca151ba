//! Seeded training loops for the translation models and the toy classifier.
//!
//! Training is strictly sequential and seeded, so a given (dataset, config)
//! pair always produces bit-identical parameters. Target-side attacks are
//! applied to the training targets once, up front, through the same code
//! path regardless of whether the attack is a no-op — a zero perturbation
//! therefore reproduces the clean trajectory exactly.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nets::{DiscriminatorNet, GeneratorNet};
use super::nn::{concat_channels, sigmoid_scalar, softmax, split_channels, AdamState, Tensor};
use super::{image_to_chw, Im2ImModel, ModelKind, ToyClassifier, TrainingMeta};
use crate::dataset::{derive_seed, dominant_shape_class, PairedDataset};
use crate::error::{Error, Result};
use crate::image_buffer::{apply_perturbation, Perturbation};
use crate::warp::{random_smooth_flow, warp_with_flow};

/// Perturbation applied to the training targets before any optimization
/// begins. The generator's inputs are never touched.
#[derive(Debug, Clone)]
pub enum TargetAttack {
    None,
    /// Add a fixed perturbation to every target (clamped to valid range).
    Additive(Perturbation),
    /// Warp each target with an independent seeded smooth flow capped at
    /// `xi_f` pixels.
    Warp { xi_f: f64, seed: u64 },
}

impl TargetAttack {
    pub fn describe(&self) -> String {
        match self {
            TargetAttack::None => "none".into(),
            TargetAttack::Additive(p) => {
                if p.is_zero() {
                    "additive(zero)".into()
                } else {
                    "additive".into()
                }
            }
            TargetAttack::Warp { xi_f, seed } => format!("warp(xi_f={xi_f}, seed={seed})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight of the L1 reconstruction term in the generator loss.
    pub l1_weight: f64,
    /// Weight of the cycle-consistency term (cycle models only).
    pub cycle_weight: f64,
    pub target_attack: TargetAttack,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 2e-3,
            seed: 7,
            l1_weight: 100.0,
            cycle_weight: 10.0,
            target_attack: TargetAttack::None,
        }
    }
}

fn validate_train_inputs(data: &PairedDataset, cfg: &TrainConfig) -> Result<(usize, usize)> {
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if cfg.l1_weight < 0.0 || cfg.cycle_weight < 0.0 {
        return Err(Error::Config("loss weights must be non-negative".into()));
    }
    let first = &data.pairs()[0];
    let (h, w, _) = first.input.dim();
    for p in data.pairs() {
        if p.input.dim() != (h, w, 3) || p.target.dim() != (h, w, 3) {
            return Err(Error::Data(
                "training requires uniform 3-channel pair dimensions".into(),
            ));
        }
    }
    Ok((h, w))
}

/// The target image the paired trainer actually fits pair `index` against
/// under `attack`: the clean target, an additively perturbed one, or one
/// warped by a seeded smooth flow. Public so evaluations of training-time
/// attacks can recompute the exact corrupted targets without retraining.
pub fn training_target(
    pair: &crate::dataset::DatasetPair,
    index: usize,
    attack: &TargetAttack,
) -> Result<crate::image_buffer::ImageBuffer> {
    match attack {
        TargetAttack::None => Ok(pair.target.clone()),
        TargetAttack::Additive(p) => apply_perturbation(&pair.target, p),
        TargetAttack::Warp { xi_f, seed } => {
            if *xi_f < 0.0 || !xi_f.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "warp budget must be finite and non-negative, got {xi_f}"
                )));
            }
            let (h, w, _) = pair.target.dim();
            let flow = random_smooth_flow(h, w, *xi_f, derive_seed(*seed, index as u64));
            warp_with_flow(&pair.target, &flow)
        }
    }
}

/// Materializes the (possibly attacked) target tensors.
fn attacked_targets(data: &PairedDataset, attack: &TargetAttack) -> Result<Vec<Tensor>> {
    data.pairs()
        .iter()
        .enumerate()
        .map(|(i, pair)| Ok(image_to_chw(&training_target(pair, i, attack)?)))
        .collect()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        0.0
    } else {
        x.exp().ln_1p()
    }
}

/// Mean binary cross-entropy over a logit map against a constant target,
/// plus its gradient with respect to the logits.
fn bce_with_logits(logits: &Tensor, target: f64) -> (f64, Tensor) {
    let n = logits.len() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for g in grad.iter_mut() {
        let l = *g;
        loss += target * softplus(-l) + (1.0 - target) * softplus(l);
        *g = (sigmoid_scalar(l) - target) / n;
    }
    (loss / n, grad)
}

/// Mean absolute error and its (sub)gradient with respect to `pred`.
fn l1_loss(pred: &Tensor, target: &Tensor, weight: f64) -> (f64, Tensor) {
    let n = pred.len() as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.iter_mut().zip(target.iter()) {
        let d = *g - t;
        loss += d.abs();
        *g = d.signum() * weight / n;
    }
    (weight * loss / n, grad)
}

fn check_finite(loss: f64, epoch: usize, what: &str) -> Result<()> {
    if !loss.is_finite() || loss.abs() > 1e8 {
        return Err(Error::TrainingDiverged {
            epoch,
            detail: format!("{what} loss reached {loss}"),
        });
    }
    Ok(())
}

struct GanOptim {
    adam: AdamState,
    lr: f64,
}

impl GanOptim {
    fn new(n: usize, lr: f64) -> Self {
        // beta1 = 0.5 keeps the momentum short, which stabilizes the
        // adversarial game on small batches.
        GanOptim {
            adam: AdamState::new(n, 0.5),
            lr,
        }
    }

    fn step_gen(&mut self, net: &mut GeneratorNet, grads: &[f64]) {
        let mut p = net.params_flat();
        self.adam.step(&mut p, grads, self.lr);
        net.load_flat(&p)
            .expect("parameter length is architecture-determined");
    }

    fn step_disc(&mut self, net: &mut DiscriminatorNet, grads: &[f64]) {
        let mut p = net.params_flat();
        self.adam.step(&mut p, grads, self.lr);
        net.load_flat(&p)
            .expect("parameter length is architecture-determined");
    }
}

fn add_flat(a: &mut Vec<f64>, b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Trains a paired translation model (conditional discriminator,
/// adversarial + weighted L1 generator loss).
pub fn train_paired(data: &PairedDataset, cfg: &TrainConfig) -> Result<Im2ImModel> {
    let (h, w) = validate_train_inputs(data, cfg)?;
    let mut model = Im2ImModel::untrained_paired(h, w, cfg.seed)?;
    let inputs: Vec<Tensor> = data.pairs().iter().map(|p| image_to_chw(&p.input)).collect();
    let targets = attacked_targets(data, &cfg.target_attack)?;

    let (gen, disc) = match &mut model.kind {
        ModelKind::Paired { gen, disc } => (gen, disc),
        ModelKind::Cycle { .. } => unreachable!(),
    };
    let mut opt_g = GanOptim::new(gen.params_flat().len(), cfg.learning_rate);
    let mut opt_d = GanOptim::new(disc.params_flat().len(), cfg.learning_rate);

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut last_g_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5u64 << 32 | epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_g = 0.0;
        for &i in &order {
            let x = &inputs[i];
            let y = &targets[i];

            // Discriminator update on one real and one generated pair.
            let fake = gen.forward(x);
            let real_cache = disc.forward_cached(&concat_channels(x, y));
            let (loss_real, glog_real) = bce_with_logits(&real_cache.logits, 1.0);
            let fake_cache = disc.forward_cached(&concat_channels(x, &fake));
            let (loss_fake, glog_fake) = bce_with_logits(&fake_cache.logits, 0.0);
            check_finite(loss_real + loss_fake, epoch, "discriminator")?;
            let (gr, _) = disc.backward(&real_cache, &glog_real);
            let (gf, _) = disc.backward(&fake_cache, &glog_fake);
            let mut d_grads = gr.flat().to_vec();
            add_flat(&mut d_grads, gf.flat());
            opt_d.step_disc(disc, &d_grads);

            // Generator update: non-saturating adversarial + weighted L1.
            let (fake, gcache) = gen.forward_cached(x);
            let adv_cache = disc.forward_cached(&concat_channels(x, &fake));
            let (loss_adv, glog_adv) = bce_with_logits(&adv_cache.logits, 1.0);
            let (_, gin6) = disc.backward(&adv_cache, &glog_adv);
            let (_, g_fake_adv) = split_channels(&gin6, 3);
            let (loss_l1, g_fake_l1) = l1_loss(&fake, y, cfg.l1_weight);
            let g_loss = loss_adv + loss_l1;
            check_finite(g_loss, epoch, "generator")?;
            let gout = &g_fake_adv + &g_fake_l1;
            let (g_grads, _) = gen.backward(&gcache, &gout);
            opt_g.step_gen(gen, g_grads.flat());
            epoch_g += g_loss;
        }
        last_g_loss = epoch_g / inputs.len() as f64;
    }

    model.meta = TrainingMeta {
        dataset: data.name().to_string(),
        epochs: cfg.epochs,
        seed: cfg.seed,
        learning_rate: cfg.learning_rate,
        target_attack: cfg.target_attack.describe(),
        final_loss: Some(last_g_loss),
    };
    Ok(model)
}

/// Trains an unpaired cycle model: two generators, two unconditional
/// discriminators, adversarial + cycle-consistency losses. The dataset's
/// inputs serve as domain A and its targets as domain B; the pairing is
/// ignored (B is traversed in an independently shuffled order).
pub fn train_cycle(data: &PairedDataset, cfg: &TrainConfig) -> Result<Im2ImModel> {
    let (h, w) = validate_train_inputs(data, cfg)?;
    if !matches!(cfg.target_attack, TargetAttack::None) {
        return Err(Error::Config(
            "target-side attacks are only defined for paired training".into(),
        ));
    }
    let mut model = Im2ImModel::untrained_cycle(h, w, cfg.seed)?;
    let a_imgs: Vec<Tensor> = data.pairs().iter().map(|p| image_to_chw(&p.input)).collect();
    let b_imgs: Vec<Tensor> = data.pairs().iter().map(|p| image_to_chw(&p.target)).collect();

    let (gen_ab, gen_ba, disc_a, disc_b) = match &mut model.kind {
        ModelKind::Cycle {
            gen_ab,
            gen_ba,
            disc_a,
            disc_b,
        } => (gen_ab, gen_ba, disc_a, disc_b),
        ModelKind::Paired { .. } => unreachable!(),
    };
    let mut opt_gab = GanOptim::new(gen_ab.params_flat().len(), cfg.learning_rate);
    let mut opt_gba = GanOptim::new(gen_ba.params_flat().len(), cfg.learning_rate);
    let mut opt_da = GanOptim::new(disc_a.params_flat().len(), cfg.learning_rate);
    let mut opt_db = GanOptim::new(disc_b.params_flat().len(), cfg.learning_rate);

    let n = a_imgs.len();
    let mut order_a: Vec<usize> = (0..n).collect();
    let mut order_b: Vec<usize> = (0..n).collect();
    let mut last_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x6u64 << 32 | epoch as u64));
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for s in 0..n {
            let a = &a_imgs[order_a[s]];
            let b = &b_imgs[order_b[s]];

            // Discriminator updates.
            let fb = gen_ab.forward(a);
            let fa = gen_ba.forward(b);
            for (disc, opt, real, fake, name) in [
                (&mut *disc_a, &mut opt_da, a, &fa, "discriminator-a"),
                (&mut *disc_b, &mut opt_db, b, &fb, "discriminator-b"),
            ] {
                let rc = disc.forward_cached(real);
                let (lr_, glr) = bce_with_logits(&rc.logits, 1.0);
                let fc = disc.forward_cached(fake);
                let (lf, glf) = bce_with_logits(&fc.logits, 0.0);
                check_finite(lr_ + lf, epoch, name)?;
                let (gr, _) = disc.backward(&rc, &glr);
                let (gf, _) = disc.backward(&fc, &glf);
                let mut grads = gr.flat().to_vec();
                add_flat(&mut grads, gf.flat());
                opt.step_disc(disc, &grads);
            }

            // Generator updates (joint): adversarial on both directions plus
            // both cycle reconstructions.
            let (fb, cab1) = gen_ab.forward_cached(a);
            let (ra, cba2) = gen_ba.forward_cached(&fb);
            let (fa, cba1) = gen_ba.forward_cached(b);
            let (rb, cab2) = gen_ab.forward_cached(&fa);

            let adv_b = disc_b.forward_cached(&fb);
            let (l_adv_ab, glog_b) = bce_with_logits(&adv_b.logits, 1.0);
            let (_, gfb_adv) = disc_b.backward(&adv_b, &glog_b);
            let adv_a = disc_a.forward_cached(&fa);
            let (l_adv_ba, glog_a) = bce_with_logits(&adv_a.logits, 1.0);
            let (_, gfa_adv) = disc_a.backward(&adv_a, &glog_a);

            let (l_cyc_a, gra) = l1_loss(&ra, a, cfg.cycle_weight);
            let (grads_ba_rec, gfb_cyc) = gen_ba.backward(&cba2, &gra);
            let (l_cyc_b, grb) = l1_loss(&rb, b, cfg.cycle_weight);
            let (grads_ab_rec, gfa_cyc) = gen_ab.backward(&cab2, &grb);

            let total = l_adv_ab + l_adv_ba + l_cyc_a + l_cyc_b;
            check_finite(total, epoch, "generator")?;

            let gfb = &gfb_adv + &gfb_cyc;
            let (grads_ab_main, _) = gen_ab.backward(&cab1, &gfb);
            let gfa = &gfa_adv + &gfa_cyc;
            let (grads_ba_main, _) = gen_ba.backward(&cba1, &gfa);

            let mut grads_ab = grads_ab_main.flat().to_vec();
            add_flat(&mut grads_ab, grads_ab_rec.flat());
            let mut grads_ba = grads_ba_main.flat().to_vec();
            add_flat(&mut grads_ba, grads_ba_rec.flat());
            opt_gab.step_gen(gen_ab, &grads_ab);
            opt_gba.step_gen(gen_ba, &grads_ba);
            epoch_loss += total;
        }
        last_loss = epoch_loss / n as f64;
    }

    model.meta = TrainingMeta {
        dataset: data.name().to_string(),
        epochs: cfg.epochs,
        seed: cfg.seed,
        learning_rate: cfg.learning_rate,
        target_attack: cfg.target_attack.describe(),
        final_loss: Some(last_loss),
    };
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 40,
            learning_rate: 5e-3,
            seed: 7,
        }
    }
}

/// Label for classification tasks: the class of the dominant shape in the
/// pair's segmentation map.
pub fn pair_label(seg: &ndarray::Array2<u8>, num_classes: usize) -> usize {
    dominant_shape_class(seg, num_classes)
}

/// Trains the toy classifier on the dataset's input images against
/// dominant-shape labels, by plain cross-entropy.
pub fn train_classifier(
    data: &PairedDataset,
    cfg: &ClassifierTrainConfig,
) -> Result<ToyClassifier> {
    train_domain_classifier(data, crate::budget::AttackDomain::Input, cfg)
}

/// Trains the toy classifier on one side of the dataset — the inputs or the
/// targets — against the same dominant-shape labels. Attacks aimed at the
/// reference images need a classifier that is actually accurate on that
/// rendering, not on the input rendering.
pub fn train_domain_classifier(
    data: &PairedDataset,
    domain: crate::budget::AttackDomain,
    cfg: &ClassifierTrainConfig,
) -> Result<ToyClassifier> {
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let (h, w, _) = data.pairs()[0].input.dim();
    let k = data.num_classes();
    let mut clf = ToyClassifier::untrained(h, w, k, cfg.seed)?;
    let inputs: Vec<Tensor> = data
        .pairs()
        .iter()
        .map(|p| match domain {
            crate::budget::AttackDomain::Input => image_to_chw(&p.input),
            crate::budget::AttackDomain::Target => image_to_chw(&p.target),
        })
        .collect();
    let labels: Vec<usize> = data
        .pairs()
        .iter()
        .map(|p| pair_label(&p.seg_labels, k))
        .collect();

    let mut adam = AdamState::new(clf.net.params_flat().len(), 0.9);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut last_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7u64 << 32 | epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let cache = clf.net.forward_cached(&inputs[i]);
            let probs = softmax(&cache.logits);
            let loss = -(probs[labels[i]].max(1e-300)).ln();
            check_finite(loss, epoch, "classifier")?;
            let mut glog: Array1<f64> = probs;
            glog[labels[i]] -= 1.0;
            let (grads, _) = clf.net.backward(&cache, &glog);
            let mut p = clf.net.params_flat();
            adam.step(&mut p, grads.flat(), cfg.learning_rate);
            clf.net
                .load_flat(&p)
                .expect("parameter length is architecture-determined");
            epoch_loss += loss;
        }
        last_loss = epoch_loss / inputs.len() as f64;
    }

    clf.meta = TrainingMeta {
        dataset: data.name().to_string(),
        epochs: cfg.epochs,
        seed: cfg.seed,
        learning_rate: cfg.learning_rate,
        target_attack: "none".into(),
        final_loss: Some(last_loss),
    };
    Ok(clf)
}

/// Fraction of dataset inputs the classifier labels correctly.
pub fn classifier_accuracy(clf: &ToyClassifier, data: &PairedDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("accuracy over an empty dataset is undefined".into()));
    }
    let k = data.num_classes();
    let mut correct = 0usize;
    for pair in data.pairs() {
        if clf.classify(&pair.input)? == pair_label(&pair.seg_labels, k) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_dataset, DatasetKind, DatasetSpec};

    fn small_shapes(n: usize, side: usize, seed: u64) -> PairedDataset {
        make_synthetic_dataset(&DatasetSpec {
            kind: DatasetKind::Shapes,
            n,
            height: side,
            width: side,
            classes: 3,
            seed,
            background_examples: false,
            name: None,
        })
        .unwrap()
    }

    #[test]
    fn paired_training_is_deterministic_and_improves_reconstruction() {
        let data = small_shapes(6, 12, 40);
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let m1 = train_paired(&data, &cfg).unwrap();
        let m2 = train_paired(&data, &cfg).unwrap();
        assert_eq!(m1.params_flat(), m2.params_flat());
        assert_eq!(m1.meta.epochs, 4);
        assert_eq!(m1.meta.target_attack, "none");

        let untrained = Im2ImModel::untrained_paired(12, 12, cfg.seed).unwrap();
        let mut err_trained = 0.0;
        let mut err_untrained = 0.0;
        for p in data.pairs() {
            err_trained += m1.generate(&p.input).unwrap().mean_abs_diff(&p.target).unwrap();
            err_untrained += untrained
                .generate(&p.input)
                .unwrap()
                .mean_abs_diff(&p.target)
                .unwrap();
        }
        assert!(
            err_trained < err_untrained,
            "training should reduce reconstruction error: {err_trained} vs {err_untrained}"
        );
    }

    #[test]
    fn zero_additive_attack_reproduces_clean_training_bit_for_bit() {
        let data = small_shapes(4, 8, 41);
        let cfg_clean = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let zero = Perturbation::zeros(8, 8, 3);
        let cfg_zero = TrainConfig {
            epochs: 2,
            target_attack: TargetAttack::Additive(zero),
            ..TrainConfig::default()
        };
        let m_clean = train_paired(&data, &cfg_clean).unwrap();
        let m_zero = train_paired(&data, &cfg_zero).unwrap();
        assert_eq!(m_clean.params_flat(), m_zero.params_flat());
        assert_eq!(m_zero.meta.target_attack, "additive(zero)");
    }

    #[test]
    fn warped_targets_change_the_trained_model() {
        let data = small_shapes(4, 8, 42);
        let cfg_clean = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let cfg_warp = TrainConfig {
            epochs: 2,
            target_attack: TargetAttack::Warp { xi_f: 2.0, seed: 9 },
            ..TrainConfig::default()
        };
        let m_clean = train_paired(&data, &cfg_clean).unwrap();
        let m_warp = train_paired(&data, &cfg_warp).unwrap();
        assert_ne!(m_clean.params_flat(), m_warp.params_flat());
    }

    #[test]
    fn cycle_training_runs_and_is_deterministic() {
        let data = make_synthetic_dataset(&DatasetSpec {
            kind: DatasetKind::Textures,
            n: 4,
            height: 8,
            width: 8,
            classes: 2,
            seed: 50,
            background_examples: false,
            name: None,
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let m1 = train_cycle(&data, &cfg).unwrap();
        let m2 = train_cycle(&data, &cfg).unwrap();
        assert!(m1.is_cycle());
        assert_eq!(m1.params_flat(), m2.params_flat());

        let attacked = TrainConfig {
            target_attack: TargetAttack::Warp { xi_f: 1.0, seed: 1 },
            ..cfg
        };
        assert!(train_cycle(&data, &attacked).is_err());
    }

    #[test]
    fn classifier_learns_the_training_set() {
        let data = small_shapes(24, 16, 43);
        let cfg = ClassifierTrainConfig::default();
        let clf = train_classifier(&data, &cfg).unwrap();
        let acc = classifier_accuracy(&clf, &data).unwrap();
        assert!(acc >= 0.95, "train accuracy {acc} below 0.95");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = small_shapes(2, 8, 44);
        let cfg = TrainConfig::default();
        let bad = TrainConfig {
            epochs: 0,
            ..cfg.clone()
        };
        assert!(train_paired(&data, &bad).is_err());
        let bad_lr = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        assert!(train_paired(&data, &bad_lr).is_err());
    }
}
