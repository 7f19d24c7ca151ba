//! Image-agnostic additive attack: per-image minimal fooling perturbations
//! are aggregated over a dataset and repeatedly projected onto an lp ball,
//! until a target fraction of images is fooled.

use ndarray::{Array1, Array3};

use crate::budget::{AttackDomain, UniversalBudget};
use crate::dataset::{dominant_shape_class, PairedDataset};
use crate::error::{Error, Result};
use crate::image_buffer::{apply_perturbation, ImageBuffer, NormOrder, Perturbation};
use crate::models::objective::chw_to_hwc;
use crate::models::{argmax_first, ToyClassifier};

/// Overshoot factor applied to the accumulated minimal perturbation so the
/// iterate actually crosses the decision boundary instead of landing on it.
pub const DEFAULT_OVERSHOOT: f64 = 1.02;

pub const DEFAULT_MAX_STEPS: usize = 50;

/// Projects a perturbation onto the lp ball of radius `radius` (unit range,
/// not 8-bit counts). `LInf` clamps componentwise; `L2` rescales toward the
/// origin. Idempotent, and the identity inside the ball.
pub fn project_lp(delta: &Perturbation, radius: f64, order: NormOrder) -> Result<Perturbation> {
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "projection radius must be finite and non-negative, got {radius}"
        )));
    }
    let arr = delta.delta();
    let projected = match order {
        NormOrder::LInf => arr.mapv(|v| v.clamp(-radius, radius)),
        NormOrder::L2 => {
            let norm = arr.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let f = radius / norm;
                arr.mapv(|v| v * f)
            } else {
                arr.to_owned()
            }
        }
    };
    Perturbation::from_array(projected)
}

/// Gradient access a linearizing attack needs from a classifier: logits and
/// the input gradient of every logit, evaluated at an arbitrary (possibly
/// off-range) point in image layout (H, W, C).
pub trait ClassifierOracle {
    fn num_classes(&self) -> usize;
    fn logits_and_grads(&self, x: &Array3<f64>) -> Result<(Array1<f64>, Vec<Array3<f64>>)>;

    fn predict(&self, x: &Array3<f64>) -> Result<usize> {
        Ok(argmax_first(&self.logits_and_grads(x)?.0))
    }
}

impl ClassifierOracle for ToyClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes()
    }

    fn logits_and_grads(&self, x: &Array3<f64>) -> Result<(Array1<f64>, Vec<Array3<f64>>)> {
        let (h, w, c) = x.dim();
        if h != self.height() || w != self.width() || c != 3 {
            return Err(Error::dim(
                format!("{}x{}x3", self.height(), self.width()),
                format!("{h}x{w}x{c}"),
            ));
        }
        let t = Array3::from_shape_fn((3, h, w), |(ch, v, u)| x[(v, u, ch)]);
        let (logits, grads) = self.logits_with_input_grads(&t);
        Ok((logits, grads.iter().map(|g| chw_to_hwc(g, 3)).collect()))
    }
}

/// The smallest perturbation (found by iterative linearization) that changes
/// the oracle's prediction at `x`, scaled by the overshoot factor.
#[derive(Debug, Clone)]
pub struct MinimalPerturbation {
    /// Perturbation in image layout; `x + delta` is exactly the final
    /// iterate the oracle was evaluated at (clipped into the box when one
    /// was given), so `fooled` describes the image a caller will actually
    /// apply.
    pub delta: Array3<f64>,
    /// Whether the prediction at `x + delta` actually differs from the one
    /// at `x`.
    pub fooled: bool,
    pub steps: usize,
}

/// Smallest prediction-changing perturbation for one image, found by
/// iteratively linearizing the classifier and stepping just across the
/// nearest decision boundary with a fixed 1.02 overshoot. The returned
/// delta includes the overshoot, and `x + delta` always stays inside the
/// valid image range.
pub fn minimal_per_image_perturbation<O: ClassifierOracle>(
    oracle: &O,
    x: &ImageBuffer,
    max_steps: usize,
) -> Result<MinimalPerturbation> {
    minimal_fooling_core(
        oracle,
        &x.as_array().to_owned(),
        DEFAULT_OVERSHOOT,
        max_steps,
        Some((0.0, 1.0)),
    )
}

/// Boundary search behind [`minimal_per_image_perturbation`]. When `clip`
/// is given, every probe is clamped into `[clip.0, clip.1]` before
/// evaluation, so the search walks the feasible image box instead of
/// declaring success at points a caller could never realize; pass `None`
/// for unconstrained geometry.
fn minimal_fooling_core<O: ClassifierOracle>(
    oracle: &O,
    x: &Array3<f64>,
    overshoot: f64,
    max_steps: usize,
    clip: Option<(f64, f64)>,
) -> Result<MinimalPerturbation> {
    if !(overshoot.is_finite() && overshoot >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "overshoot must be at least 1, got {overshoot}"
        )));
    }
    if max_steps == 0 {
        return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
    }
    let k = oracle.num_classes();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "fooling needs at least two classes".into(),
        ));
    }
    if let Some((lo, hi)) = clip {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "clip bounds must be finite and ordered, got ({lo}, {hi})"
            )));
        }
    }
    let clip_probe = |p: Array3<f64>| match clip {
        Some((lo, hi)) => p.mapv(|v| v.clamp(lo, hi)),
        None => p,
    };
    let (logits0, _) = oracle.logits_and_grads(x)?;
    let label0 = argmax_first(&logits0);

    let mut r_total: Array3<f64> = Array3::zeros(x.dim());
    let mut steps = 0usize;
    let mut fooled = false;
    let mut last_probe: Option<Array3<f64>> = None;
    while steps < max_steps {
        let probe = clip_probe(x + &r_total.mapv(|v| v * overshoot));
        let (logits, grads) = oracle.logits_and_grads(&probe)?;
        if argmax_first(&logits) != label0 {
            fooled = true;
            last_probe = Some(probe);
            break;
        }
        // Nearest boundary under the local linearization.
        let mut best: Option<(f64, usize)> = None;
        for j in 0..k {
            if j == label0 {
                continue;
            }
            let w_norm2: f64 = grads[j]
                .iter()
                .zip(grads[label0].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if w_norm2 <= 1e-30 {
                continue;
            }
            let f_gap = logits[j] - logits[label0]; // <= 0 at the base point
            let dist = f_gap.abs() / w_norm2.sqrt();
            if best.map_or(true, |(d, _)| dist < d) {
                best = Some((dist, j));
            }
        }
        let Some((_, j)) = best else {
            // All candidate boundaries are degenerate; no direction to move.
            break;
        };
        let f_gap = logits[j] - logits[label0];
        let w_norm2: f64 = grads[j]
            .iter()
            .zip(grads[label0].iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let scale = (f_gap.abs() + 1e-9) / w_norm2;
        for ((r, gj), gl) in r_total
            .iter_mut()
            .zip(grads[j].iter())
            .zip(grads[label0].iter())
        {
            *r += scale * (gj - gl);
        }
        steps += 1;
    }
    let probe = match last_probe {
        Some(p) => p,
        None => {
            // Either the step budget ran out or the search stalled; report
            // the prediction at the final overshot iterate honestly.
            let p = clip_probe(x + &r_total.mapv(|v| v * overshoot));
            let (logits, _) = oracle.logits_and_grads(&p)?;
            fooled = argmax_first(&logits) != label0;
            p
        }
    };
    Ok(MinimalPerturbation {
        delta: probe - x,
        fooled,
        steps,
    })
}

/// One pass-level snapshot of the aggregation loop.
#[derive(Debug, Clone, Copy)]
pub struct PassStats {
    pub pass: usize,
    pub fooling_rate: f64,
    pub updates: usize,
}

/// Outcome of the aggregation loop: the shared perturbation, how well it
/// fools the classifier, and how much of the pass budget was spent.
#[derive(Debug, Clone)]
pub struct UniversalResult {
    pub pert: Perturbation,
    /// Which side of the dataset pairs the perturbation was built against.
    pub domain: AttackDomain,
    /// Fooling rate of the returned perturbation over all images in the
    /// attacked domain.
    pub achieved_fooling_rate: f64,
    pub passes_used: usize,
    pub budget: UniversalBudget,
    /// Per-pass fooling rates and update counts, for diagnostics.
    pub passes: Vec<PassStats>,
    /// Images whose clean prediction disagreed with their dataset label and
    /// were therefore skipped during aggregation (they still count in the
    /// fooling-rate denominator).
    pub skipped: usize,
}

fn images_of<'a>(
    data: &'a PairedDataset,
    domain: AttackDomain,
) -> impl Iterator<Item = &'a ImageBuffer> {
    data.pairs().iter().map(move |p| match domain {
        AttackDomain::Input => &p.input,
        AttackDomain::Target => &p.target,
    })
}

/// Fraction of images whose prediction changes when the perturbation is
/// added (and the result clamped to valid range). The denominator is every
/// image passed in.
pub fn fooling_rate_over<'a, I>(
    clf: &ToyClassifier,
    images: I,
    perturbation: &Perturbation,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a ImageBuffer>,
{
    let mut changed = 0usize;
    let mut total = 0usize;
    for img in images {
        let clean = clf.classify(img)?;
        let adv = clf.classify(&apply_perturbation(img, perturbation)?)?;
        if adv != clean {
            changed += 1;
        }
        total += 1;
    }
    if total == 0 {
        return Err(Error::Data("fooling rate over zero images is undefined".into()));
    }
    Ok(changed as f64 / total as f64)
}

/// Fooling rate of a perturbation over one side of a paired dataset.
pub fn fooling_rate(
    clf: &ToyClassifier,
    data: &PairedDataset,
    perturbation: &Perturbation,
    domain: AttackDomain,
) -> Result<f64> {
    fooling_rate_over(clf, images_of(data, domain), perturbation)
}

/// Builds a single perturbation that fools the classifier on at least
/// `1 - delta` of the chosen domain's images, if the pass budget allows.
/// Each pass walks the dataset in order; images already fooled by the
/// current aggregate are skipped, as are images the clean classifier
/// already misclassifies (they contribute nothing to the attack objective
/// but still count in the rate). The returned perturbation is the
/// best-scoring iterate the sweep certified, which is the final one
/// whenever the constraint was met. Deterministic: no randomness involved.
pub fn compute_universal_perturbation(
    clf: &ToyClassifier,
    data: &PairedDataset,
    domain: AttackDomain,
    budget: &UniversalBudget,
) -> Result<UniversalResult> {
    budget.validate()?;
    if clf.meta.epochs == 0 {
        return Err(Error::Capability(
            "universal aggregation needs a trained classifier; this one has no training history"
                .into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::Data("cannot aggregate over zero images".into()));
    }
    let images: Vec<&ImageBuffer> = images_of(data, domain).collect();
    let labels: Vec<usize> = data
        .pairs()
        .iter()
        .map(|p| dominant_shape_class(&p.seg_labels, data.num_classes()))
        .collect();
    let (h, w, c) = images[0].dim();

    let clean: Vec<usize> = images
        .iter()
        .map(|img| clf.classify(img))
        .collect::<Result<_>>()?;
    let eligible: Vec<bool> = clean.iter().zip(&labels).map(|(c, l)| c == l).collect();
    let skipped = eligible.iter().filter(|e| !**e).count();

    let radius = budget.xi_unit();
    let mut xi = Perturbation::zeros(h, w, c);
    let mut passes = Vec::new();
    let target = 1.0 - budget.delta;

    // A zero perturbation flips nothing, so the constraint starts satisfied
    // only when it is vacuous; in that case no search is needed at all.
    if 0.0 >= target {
        return Ok(UniversalResult {
            pert: xi,
            domain,
            achieved_fooling_rate: 0.0,
            passes_used: 0,
            budget: *budget,
            passes,
            skipped,
        });
    }

    // Later updates can undo earlier ones, so the aggregate's quality is
    // not monotone along the sweep; the search therefore checks the
    // stopping constraint after every accepted update and remembers the
    // best iterate it has certified (every candidate is projected, so the
    // ball invariant holds for whichever iterate is returned).
    let mut best_xi = xi.clone();
    let mut best_rate = 0.0f64;

    'search: for pass in 1..=budget.max_passes {
        let mut updates = 0usize;
        let mut rate = 0.0f64;
        for (i, &img) in images.iter().enumerate() {
            if !eligible[i] {
                continue;
            }
            let applied = apply_perturbation(img, &xi)?;
            if clf.classify(&applied)? != clean[i] {
                continue; // already fooled by the aggregate
            }
            let step = minimal_per_image_perturbation(clf, &applied, DEFAULT_MAX_STEPS)?;
            if !step.fooled {
                continue;
            }
            // Accumulate relative to the image the search actually walked
            // from: the raw sum x + xi can sit far outside the valid range,
            // where adding the step would land somewhere the search never
            // certified, and the overgrown coordinates would cancel later
            // updates instead of cooperating with them.
            let candidate =
                Perturbation::from_array(applied.as_array() + &step.delta - img.as_array())?;
            xi = project_lp(&candidate, radius, budget.p)?;
            updates += 1;
            rate = fooling_rate_over(clf, images.iter().copied(), &xi)?;
            if rate > best_rate {
                best_rate = rate;
                best_xi = xi.clone();
            }
            if rate >= target {
                passes.push(PassStats {
                    pass,
                    fooling_rate: rate,
                    updates,
                });
                break 'search;
            }
        }
        passes.push(PassStats {
            pass,
            fooling_rate: rate,
            updates,
        });
        if updates == 0 {
            // No image produced an accepted update; further passes would
            // repeat the exact same trajectory.
            break;
        }
    }

    Ok(UniversalResult {
        domain,
        pert: best_xi,
        achieved_fooling_rate: best_rate,
        passes_used: passes.len(),
        budget: *budget,
        passes,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_dataset, DatasetSpec};
    use crate::models::train::{classifier_accuracy, train_classifier, ClassifierTrainConfig};

    /// Binary linear classifier: logits = [0, w.x + b]. Its minimal fooling
    /// perturbation from a point on the positive side has the closed form
    /// -(w.x + b) w / ||w||^2, reached in exactly one linearization step.
    struct LinearOracle {
        w: Array3<f64>,
        b: f64,
    }

    impl ClassifierOracle for LinearOracle {
        fn num_classes(&self) -> usize {
            2
        }

        fn logits_and_grads(&self, x: &Array3<f64>) -> Result<(Array1<f64>, Vec<Array3<f64>>)> {
            let s = (&self.w * x).sum() + self.b;
            Ok((
                Array1::from(vec![0.0, s]),
                vec![Array3::zeros(x.dim()), self.w.clone()],
            ))
        }
    }

    #[test]
    fn linear_oracle_is_solved_in_one_step_with_closed_form() {
        let mut w = Array3::zeros((2, 2, 3));
        for (i, v) in w.iter_mut().enumerate() {
            *v = 0.1 + 0.05 * i as f64;
        }
        let oracle = LinearOracle { w: w.clone(), b: -0.4 };
        let x = Array3::from_elem((2, 2, 3), 0.6);
        let s0 = (&w * &x).sum() - 0.4;
        assert!(s0 > 0.0, "test point must start on the positive side");

        let res = minimal_fooling_core(&oracle, &x, 1.02, 10, None).unwrap();
        assert!(res.fooled);
        assert_eq!(res.steps, 1);
        let w_norm2: f64 = w.iter().map(|v| v * v).sum();
        for (got, wi) in res.delta.iter().zip(w.iter()) {
            let want = -1.02 * (s0 + 1e-9) / w_norm2 * wi;
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn projection_clamps_linf_and_rescales_l2() {
        let mut d = Array3::zeros((1, 2, 3));
        d[(0, 0, 0)] = 0.6;
        d[(0, 1, 2)] = -0.9;
        let p = Perturbation::from_array(d.clone()).unwrap();

        let inf = project_lp(&p, 0.5, NormOrder::LInf).unwrap();
        assert_eq!(inf.delta()[(0, 0, 0)], 0.5);
        assert_eq!(inf.delta()[(0, 1, 2)], -0.5);

        let norm = (0.6f64 * 0.6 + 0.9 * 0.9).sqrt();
        let l2 = project_lp(&p, 0.5, NormOrder::L2).unwrap();
        let got = l2.delta();
        assert!((got[(0, 0, 0)] - 0.6 * 0.5 / norm).abs() < 1e-15);
        assert!((got[(0, 1, 2)] + 0.9 * 0.5 / norm).abs() < 1e-15);
        // idempotent and identity inside the ball
        let again = project_lp(&l2, 0.5, NormOrder::L2).unwrap();
        assert_eq!(again.delta(), l2.delta());
        let inside = project_lp(&p, 10.0, NormOrder::L2).unwrap();
        assert_eq!(inside.delta(), p.delta());
        assert!(project_lp(&p, f64::NAN, NormOrder::L2).is_err());
    }

    #[test]
    fn universal_attack_fools_a_trained_classifier() {
        let data = make_synthetic_dataset(&DatasetSpec {
            kind: crate::dataset::DatasetKind::Shapes,
            n: 64,
            height: 12,
            width: 12,
            classes: 12,
            seed: 8,
            background_examples: true,
            name: None,
        })
        .unwrap();
        let clf = train_classifier(
            &data,
            &ClassifierTrainConfig { seed: 11, ..ClassifierTrainConfig::default() },
        )
        .unwrap();
        let acc = classifier_accuracy(&clf, &data).unwrap();
        assert!(acc >= 0.95, "fixture classifier underfits: accuracy {acc}");

        let budget = UniversalBudget::new(2000.0, NormOrder::LInf, 0.2).unwrap();
        let res =
            compute_universal_perturbation(&clf, &data, AttackDomain::Input, &budget).unwrap();
        assert!(
            res.achieved_fooling_rate >= 0.8,
            "fooling rate {} below 1 - delta",
            res.achieved_fooling_rate
        );
        // the perturbation respects the budget
        let max_abs = res.pert.delta().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(max_abs <= budget.xi_unit() + 1e-12);
        assert_eq!(res.passes_used, res.passes.len());
        // the reported rate is exactly what the standalone measurement gives
        let measured = fooling_rate(&clf, &data, &res.pert, AttackDomain::Input).unwrap();
        assert_eq!(measured, res.achieved_fooling_rate);
    }

    #[test]
    fn untrained_vacuous_and_mismatched_cases() {
        let data = make_synthetic_dataset(&DatasetSpec {
            kind: crate::dataset::DatasetKind::Shapes,
            n: 2,
            height: 8,
            width: 8,
            classes: 3,
            seed: 78,
            background_examples: false,
            name: None,
        })
        .unwrap();
        let budget = UniversalBudget::new(500.0, NormOrder::LInf, 0.2).unwrap();

        // a classifier without training history is refused
        let untrained = ToyClassifier::untrained(8, 8, 3, 1).unwrap();
        assert!(matches!(
            compute_universal_perturbation(&untrained, &data, AttackDomain::Input, &budget),
            Err(Error::Capability(_))
        ));

        let clf = train_classifier(
            &data,
            &ClassifierTrainConfig {
                epochs: 1,
                ..ClassifierTrainConfig::default()
            },
        )
        .unwrap();

        // delta = 1 makes the constraint vacuous: zero perturbation, no passes
        let vacuous = UniversalBudget::new(500.0, NormOrder::LInf, 1.0).unwrap();
        let res =
            compute_universal_perturbation(&clf, &data, AttackDomain::Input, &vacuous).unwrap();
        assert_eq!(res.passes_used, 0);
        assert!(res.pert.delta().iter().all(|&v| v == 0.0));
        assert_eq!(res.achieved_fooling_rate, 0.0);

        // size mismatch surfaces as an error, not a panic
        let wide = make_synthetic_dataset(&DatasetSpec {
            kind: crate::dataset::DatasetKind::Shapes,
            n: 2,
            height: 16,
            width: 16,
            classes: 3,
            seed: 78,
            background_examples: false,
            name: None,
        })
        .unwrap();
        assert!(
            compute_universal_perturbation(&clf, &wide, AttackDomain::Input, &budget).is_err()
        );
    }
}
