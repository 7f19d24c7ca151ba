//! Spatial attack: a per-pixel backward displacement field, optimized by
//! fixed-step signed gradient descent under a per-pixel l2 cap, with a
//! total-variation smoothness penalty. Gradients flow through the bilinear
//! warp; a simultaneous-perturbation estimator covers score-only access.
//!
//! The minimized objective is `-|score(warped) - score(original)| +
//! lambda * flow_tv_loss(flow)`: larger score shifts are better, rough
//! fields are penalized. The optimizer weighs the smoothness term with the
//! budget's resolution-normalized `lambda_effective`, and
//! [`flow_attack_objective`] recomputes the exact quantity it traces when
//! given that same weight.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::budget::{AttackDomain, FlowBudget};
use crate::dataset::{derive_seed, DatasetPair};
use crate::error::{Error, Result};
use crate::image_buffer::ImageBuffer;
use crate::models::objective::chw_to_hwc;
use crate::models::{image_to_chw, Im2ImModel};
use crate::warp::{
    flow_tv_gradient, flow_tv_loss, project_flow, warp_flow_gradient, warp_with_flow, FlowField,
};

/// How the optimizer obtains gradients of the score with respect to the
/// warped image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradMode {
    /// Backpropagate through the attacked networks.
    Analytic,
    /// Two-sided simultaneous-perturbation estimate on the flow field; needs
    /// only score evaluations, at `2 * samples` extra forwards per step.
    Spsa { samples: usize, probe: f64 },
}

#[derive(Debug, Clone)]
pub struct FlowAttackConfig {
    pub budget: FlowBudget,
    pub grad: GradMode,
    /// Seed for the simultaneous-perturbation probe directions (unused by
    /// the analytic mode, which is deterministic by construction).
    pub seed: u64,
}

impl FlowAttackConfig {
    pub fn new(budget: FlowBudget) -> Self {
        FlowAttackConfig {
            budget,
            grad: GradMode::Analytic,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        if let GradMode::Spsa { samples, probe } = self.grad {
            if samples == 0 {
                return Err(Error::InvalidArgument(
                    "spsa needs at least one probe sample".into(),
                ));
            }
            if !(probe.is_finite() && probe > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "spsa probe width must be positive, got {probe}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FlowAttackResult {
    pub flow: FlowField,
    /// The warp of the attacked image under `flow`, recomputable exactly as
    /// `warp_with_flow(original, flow)`.
    pub perturbed: ImageBuffer,
    /// Score of the unwarped image under the attacked score function.
    pub score_clean: f64,
    /// Score of `perturbed`.
    pub score_attacked: f64,
    /// Full objective (score term plus weighted smoothness) at every
    /// iterate; index 0 is the zero flow. The returned flow minimizes this
    /// trace.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub budget: FlowBudget,
}

/// Scalar score with an optional analytic gradient with respect to the
/// image, in image layout.
trait ScoreFn {
    fn score(&self, img: &ImageBuffer) -> Result<f64>;
    fn score_and_grad(&self, img: &ImageBuffer) -> Result<(f64, Array3<f64>)>;
}

struct TranslationScore<'a> {
    model: &'a Im2ImModel,
}

impl ScoreFn for TranslationScore<'_> {
    fn score(&self, img: &ImageBuffer) -> Result<f64> {
        self.model.check_input(img)?;
        Ok(self
            .model
            .gen_disc_score_and_input_grad(&image_to_chw(img))
            .0)
    }

    fn score_and_grad(&self, img: &ImageBuffer) -> Result<(f64, Array3<f64>)> {
        self.model.check_input(img)?;
        let (s, g) = self.model.gen_disc_score_and_input_grad(&image_to_chw(img));
        Ok((s, chw_to_hwc(&g, img.channels())))
    }
}

struct TargetScore<'a> {
    model: &'a Im2ImModel,
    input: &'a ImageBuffer,
}

impl ScoreFn for TargetScore<'_> {
    fn score(&self, img: &ImageBuffer) -> Result<f64> {
        self.model.discriminator_score(self.input, img)
    }

    fn score_and_grad(&self, img: &ImageBuffer) -> Result<(f64, Array3<f64>)> {
        self.model.check_input(self.input)?;
        self.model.check_input(img)?;
        let (s, g) = self
            .model
            .disc_score_and_target_grad(&image_to_chw(self.input), &image_to_chw(img));
        Ok((s, chw_to_hwc(&g, img.channels())))
    }
}

/// Mean squared distance to a fixed reference image; no model involved.
struct ReferenceScore<'a> {
    reference: &'a ImageBuffer,
}

impl ScoreFn for ReferenceScore<'_> {
    fn score(&self, img: &ImageBuffer) -> Result<f64> {
        if img.dim() != self.reference.dim() {
            return Err(Error::dim(
                format!("{:?}", self.reference.dim()),
                format!("{:?}", img.dim()),
            ));
        }
        let n = img.as_array().len() as f64;
        Ok(img
            .as_array()
            .iter()
            .zip(self.reference.as_array().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    fn score_and_grad(&self, img: &ImageBuffer) -> Result<(f64, Array3<f64>)> {
        let s = self.score(img)?;
        let n = img.as_array().len() as f64;
        let g = (img.as_array() - self.reference.as_array()).mapv(|d| 2.0 * d / n);
        Ok((s, g))
    }
}

/// Objective sense: the adversarial attacks maximize |score - score0|; the
/// reference matcher minimizes the score (already a loss).
enum Sense {
    MaximizeShift { score0: f64 },
    Minimize,
}

impl Sense {
    /// Objective value to minimize (smoothness term excluded).
    fn objective(&self, s: f64) -> f64 {
        match self {
            Sense::MaximizeShift { score0 } => -(s - score0).abs(),
            Sense::Minimize => s,
        }
    }

    /// d(objective)/d(score). At the symmetric start |s - score0| = 0 the
    /// subgradient is chosen to push the score down, so the optimizer always
    /// has a direction to move.
    fn dscore(&self, s: f64) -> f64 {
        match self {
            Sense::MaximizeShift { score0 } => {
                let d = s - score0;
                if d.abs() < 1e-12 {
                    1.0
                } else {
                    -d.signum()
                }
            }
            Sense::Minimize => 1.0,
        }
    }
}

fn run_flow_descent(
    base: &ImageBuffer,
    score: &dyn ScoreFn,
    sense: &Sense,
    cfg: &FlowAttackConfig,
) -> Result<FlowAttackResult> {
    cfg.validate()?;
    let (h, w, _) = base.dim();
    let budget = &cfg.budget;
    let step = budget.step();
    let lambda = budget.lambda_effective(h, w);

    let mut flow = FlowField::zeros(h, w);
    let mut trace = Vec::with_capacity(budget.iters + 1);
    let mut best: Option<(f64, FlowField, ImageBuffer, f64)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xF10u64));

    let full_objective = |s: f64, fl: &FlowField| sense.objective(s) + lambda * flow_tv_loss(fl);

    for iter in 0..budget.iters {
        let warped = warp_with_flow(base, &flow)?;
        let (s, g_img) = match cfg.grad {
            GradMode::Analytic => {
                let (s, g) = score.score_and_grad(&warped)?;
                (s, Some(g))
            }
            GradMode::Spsa { .. } => (score.score(&warped)?, None),
        };
        let obj = full_objective(s, &flow);
        if !obj.is_finite() {
            return Err(Error::OptimizationDiverged { iteration: iter });
        }
        trace.push(obj);
        if best.as_ref().map_or(true, |(b, ..)| obj < *b) {
            best = Some((obj, flow.clone(), warped.clone(), s));
        }

        let (mut gu, mut gv) = match (cfg.grad, g_img) {
            (GradMode::Analytic, Some(g_img)) => {
                let upstream = g_img.mapv(|v| v * sense.dscore(s));
                warp_flow_gradient(base, &flow, &upstream)?
            }
            (GradMode::Spsa { samples, probe }, _) => {
                spsa_gradient(base, score, sense, &flow, samples, probe, &mut rng)?
            }
            (GradMode::Analytic, None) => unreachable!(),
        };
        let (tu, tv) = flow_tv_gradient(&flow);
        gu += &tu.mapv(|v| v * lambda);
        gv += &tv.mapv(|v| v * lambda);

        let new_du = flow.du() - &gu.mapv(signum_or_zero).mapv(|v| v * step);
        let new_dv = flow.dv() - &gv.mapv(signum_or_zero).mapv(|v| v * step);
        flow = project_flow(&FlowField::from_arrays(new_du, new_dv)?, budget);
    }

    // Score the final iterate too; trace covers every visited flow.
    let warped = warp_with_flow(base, &flow)?;
    let s = score.score(&warped)?;
    let obj = full_objective(s, &flow);
    if !obj.is_finite() {
        return Err(Error::OptimizationDiverged {
            iteration: budget.iters,
        });
    }
    trace.push(obj);
    if best.as_ref().map_or(true, |(b, ..)| obj < *b) {
        best = Some((obj, flow, warped, s));
    }

    let score_clean = score.score(base)?;
    let (_, flow, perturbed, score_attacked) = best.expect("at least one iterate was scored");
    Ok(FlowAttackResult {
        flow,
        perturbed,
        score_clean,
        score_attacked,
        objective_trace: trace,
        iterations: budget.iters,
        budget: budget.clone(),
    })
}

fn signum_or_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum()
    }
}

/// Rademacher-direction two-sided estimate of the score-term gradient with
/// respect to the flow components. The smoothness term stays analytic.
#[allow(clippy::too_many_arguments)]
fn spsa_gradient(
    base: &ImageBuffer,
    score: &dyn ScoreFn,
    sense: &Sense,
    flow: &FlowField,
    samples: usize,
    probe: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (h, w) = flow.dim();
    let mut gu = Array2::zeros((h, w));
    let mut gv = Array2::zeros((h, w));
    for _ in 0..samples {
        let du_dir = Array2::from_shape_fn((h, w), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let dv_dir = Array2::from_shape_fn((h, w), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let plus = FlowField::from_arrays(
            flow.du() + &du_dir.mapv(|d| d * probe),
            flow.dv() + &dv_dir.mapv(|d| d * probe),
        )?;
        let minus = FlowField::from_arrays(
            flow.du() - &du_dir.mapv(|d| d * probe),
            flow.dv() - &dv_dir.mapv(|d| d * probe),
        )?;
        let sp = sense.objective(score.score(&warp_with_flow(base, &plus)?)?);
        let sm = sense.objective(score.score(&warp_with_flow(base, &minus)?)?);
        let coeff = (sp - sm) / (2.0 * probe * samples as f64);
        gu += &du_dir.mapv(|d| d * coeff);
        gv += &dv_dir.mapv(|d| d * coeff);
    }
    Ok((gu, gv))
}

fn require_trained(model: &Im2ImModel) -> Result<()> {
    if model.meta.epochs == 0 {
        return Err(Error::Capability(
            "the flow attack needs a trained translation model".into(),
        ));
    }
    Ok(())
}

/// The exact quantity the optimizer minimizes, recomputable from a stored
/// flow: `-|score(warp(image, flow)) - score(image)| + lambda_flow * TV`.
/// For the input domain the score is the discriminator's verdict on the
/// generated output; for the target domain it is the discriminator's verdict
/// on the (warped) target itself, conditioned on the pair's clean input.
/// The zero flow always scores exactly 0.
pub fn flow_attack_objective(
    model: &Im2ImModel,
    pair: &DatasetPair,
    flow: &FlowField,
    domain: AttackDomain,
    lambda_flow: f64,
) -> Result<f64> {
    if !(lambda_flow.is_finite() && lambda_flow >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda_flow must be >= 0, got {lambda_flow}"
        )));
    }
    let (base, score): (&ImageBuffer, Box<dyn ScoreFn + '_>) = match domain {
        AttackDomain::Input => (&pair.input, Box::new(TranslationScore { model })),
        AttackDomain::Target => (
            &pair.target,
            Box::new(TargetScore {
                model,
                input: &pair.input,
            }),
        ),
    };
    let (fh, fw) = flow.dim();
    let (h, w, _) = base.dim();
    if (fh, fw) != (h, w) {
        return Err(Error::dim(format!("{h}x{w}"), format!("{fh}x{fw}")));
    }
    let score0 = score.score(base)?;
    let s = score.score(&warp_with_flow(base, flow)?)?;
    Ok(-(s - score0).abs() + lambda_flow * flow_tv_loss(flow))
}

/// Optimizes a bounded flow field against one dataset pair: warps the pair's
/// input (input domain) or its target (target domain) to push the
/// discriminator's score as far as possible from its clean value, starting
/// from the zero flow and projecting onto the magnitude budget after every
/// step. Returns the best iterate by objective.
pub fn optimize_flow(
    model: &Im2ImModel,
    pair: &DatasetPair,
    domain: AttackDomain,
    budget: &FlowBudget,
    seed: u64,
) -> Result<FlowAttackResult> {
    let cfg = FlowAttackConfig {
        budget: budget.clone(),
        grad: GradMode::Analytic,
        seed,
    };
    optimize_flow_with(model, pair, domain, &cfg)
}

/// [`optimize_flow`] with explicit gradient-mode control; the
/// simultaneous-perturbation mode attacks models that only expose scores.
pub fn optimize_flow_with(
    model: &Im2ImModel,
    pair: &DatasetPair,
    domain: AttackDomain,
    cfg: &FlowAttackConfig,
) -> Result<FlowAttackResult> {
    require_trained(model)?;
    match domain {
        AttackDomain::Input => flow_attack_input(model, &pair.input, cfg),
        AttackDomain::Target => flow_attack_target(model, &pair.input, &pair.target, cfg),
    }
}

/// Warps the model input to shift the discriminator's opinion of the
/// generated output as far as possible from its clean value.
pub fn flow_attack_input(
    model: &Im2ImModel,
    input: &ImageBuffer,
    cfg: &FlowAttackConfig,
) -> Result<FlowAttackResult> {
    require_trained(model)?;
    model.check_input(input)?;
    let score = TranslationScore { model };
    let score0 = score.score(input)?;
    run_flow_descent(input, &score, &Sense::MaximizeShift { score0 }, cfg)
}

/// Warps a target-domain image to shift the discriminator's realness
/// verdict on it (conditioned on the unmodified input for paired models).
pub fn flow_attack_target(
    model: &Im2ImModel,
    input: &ImageBuffer,
    target: &ImageBuffer,
    cfg: &FlowAttackConfig,
) -> Result<FlowAttackResult> {
    require_trained(model)?;
    model.check_input(input)?;
    model.check_input(target)?;
    let score = TargetScore { model, input };
    let score0 = score.score(target)?;
    run_flow_descent(target, &score, &Sense::MaximizeShift { score0 }, cfg)
}

/// Optimizes a flow that morphs `source` toward `reference` by minimizing
/// the mean squared distance between the warp and the reference. No model
/// is involved; this is the identity-translation case of the attack and the
/// harness for validating the optimizer against exhaustive search.
pub fn flow_match_reference(
    source: &ImageBuffer,
    reference: &ImageBuffer,
    cfg: &FlowAttackConfig,
) -> Result<FlowAttackResult> {
    if source.dim() != reference.dim() {
        return Err(Error::dim(
            format!("{:?}", source.dim()),
            format!("{:?}", reference.dim()),
        ));
    }
    let score = ReferenceScore { reference };
    run_flow_descent(source, &score, &Sense::Minimize, cfg)
}

/// Recovers the constant horizontal shift that best explains `shifted` as a
/// warp of `source`, by a coarse scan refined with golden-section search.
/// Assumes the true shift lies in `[-max_shift, max_shift]`.
pub fn fit_constant_shift(
    source: &ImageBuffer,
    shifted: &ImageBuffer,
    max_shift: f64,
) -> Result<f64> {
    if source.dim() != shifted.dim() {
        return Err(Error::dim(
            format!("{:?}", source.dim()),
            format!("{:?}", shifted.dim()),
        ));
    }
    if !(max_shift.is_finite() && max_shift > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_shift must be positive, got {max_shift}"
        )));
    }
    let (h, w, _) = source.dim();
    let err_at = |du: f64| -> Result<f64> {
        let flow = FlowField::constant(h, w, du, 0.0)?;
        let warped = warp_with_flow(source, &flow)?;
        let mut acc = 0.0;
        for (a, b) in warped.as_array().iter().zip(shifted.as_array().iter()) {
            let d = a - b;
            acc += d * d;
        }
        Ok(acc)
    };

    // Coarse scan keeps the refinement bracket around the global basin.
    let coarse_step = 0.2;
    let n_steps = (2.0 * max_shift / coarse_step).round() as usize;
    let mut best_du = -max_shift;
    let mut best_err = f64::INFINITY;
    for i in 0..=n_steps {
        let du = -max_shift + i as f64 * coarse_step;
        let e = err_at(du)?;
        if e < best_err {
            best_err = e;
            best_du = du;
        }
    }

    // Golden-section refinement inside one coarse cell on each side.
    let mut lo = (best_du - coarse_step).max(-max_shift);
    let mut hi = (best_du + coarse_step).min(max_shift);
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = err_at(x1)?;
    let mut f2 = err_at(x2)?;
    for _ in 0..60 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = err_at(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = err_at(x2)?;
        }
        if hi - lo < 1e-4 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
