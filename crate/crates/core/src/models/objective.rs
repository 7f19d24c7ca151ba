//! Scalar objectives over input images, with analytic input gradients and a
//! finite-difference fallback used as the verification oracle.
//!
//! Attack optimizers only ever see this interface, so swapping the attacked
//! network means picking a different variant — the optimizers stay unchanged.

use ndarray::Array3;

use super::{image_to_chw, Im2ImModel, Tensor, ToyClassifier};
use crate::error::{Error, Result};
use crate::image_buffer::ImageBuffer;

/// A differentiable scalar function of an input image.
pub enum Objective {
    /// Exactly linear probe `sum(w * x) + b`; its gradient is `w`, making it
    /// a closed-form oracle for optimizer tests.
    LinearProbe { weights: Array3<f64>, bias: f64 },
    /// Margin `logit[toward] - logit[away]` of a classifier; pushing this up
    /// moves the prediction toward `toward`.
    ClassifierMargin {
        classifier: ToyClassifier,
        away: usize,
        toward: usize,
    },
    /// Realness score the translation model's discriminator assigns to
    /// (x, G(x)).
    TranslationRealness { model: Im2ImModel },
    /// Mean squared distance 0.5*||G(x) - reference||^2 / N to a fixed
    /// reference output.
    OutputMatch {
        model: Im2ImModel,
        reference: ImageBuffer,
    },
    /// Score-only access: values pass through, gradient queries fail with a
    /// capability error so callers must use gradient-free optimization.
    Blackbox(Box<Objective>),
}

impl Objective {
    pub fn value(&self, x: &ImageBuffer) -> Result<f64> {
        match self {
            Objective::LinearProbe { weights, bias } => {
                check_probe_dims(weights, x)?;
                Ok((weights * x.as_array()).sum() + bias)
            }
            Objective::ClassifierMargin {
                classifier,
                away,
                toward,
            } => {
                let logits = classifier.logits(x)?;
                check_class(classifier, *away)?;
                check_class(classifier, *toward)?;
                Ok(logits[*toward] - logits[*away])
            }
            Objective::TranslationRealness { model } => {
                model.check_input(x)?;
                Ok(model.gen_disc_score_and_input_grad(&image_to_chw(x)).0)
            }
            Objective::OutputMatch { model, reference } => {
                model.check_input(x)?;
                model.check_input(reference)?;
                Ok(model
                    .gen_match_grad(&image_to_chw(x), &image_to_chw(reference))
                    .0)
            }
            Objective::Blackbox(inner) => inner.value(x),
        }
    }

    /// Value plus gradient in image layout (H, W, C).
    pub fn value_and_gradient(&self, x: &ImageBuffer) -> Result<(f64, Array3<f64>)> {
        match self {
            Objective::LinearProbe { weights, bias } => {
                check_probe_dims(weights, x)?;
                let v = (weights * x.as_array()).sum() + bias;
                Ok((v, weights.clone()))
            }
            Objective::ClassifierMargin {
                classifier,
                away,
                toward,
            } => {
                check_class(classifier, *away)?;
                check_class(classifier, *toward)?;
                classifier.check_input(x)?;
                let t = image_to_chw(x);
                let (logits, grads) = classifier.logits_with_input_grads(&t);
                let g = &grads[*toward] - &grads[*away];
                Ok((logits[*toward] - logits[*away], chw_to_hwc(&g, x.channels())))
            }
            Objective::TranslationRealness { model } => {
                model.check_input(x)?;
                let (v, g) = model.gen_disc_score_and_input_grad(&image_to_chw(x));
                Ok((v, chw_to_hwc(&g, x.channels())))
            }
            Objective::OutputMatch { model, reference } => {
                model.check_input(x)?;
                model.check_input(reference)?;
                let (v, g) =
                    model.gen_match_grad(&image_to_chw(x), &image_to_chw(reference));
                Ok((v, chw_to_hwc(&g, x.channels())))
            }
            Objective::Blackbox(_) => Err(Error::Capability(
                "input gradients are not available for black-box objectives; \
                 use a gradient-free optimizer"
                    .into(),
            )),
        }
    }

    /// Central-difference gradient oracle. Costs two evaluations per entry;
    /// intended for verification on small images, not optimization.
    pub fn finite_difference_gradient(&self, x: &ImageBuffer, step: f64) -> Result<Array3<f64>> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step must be positive, got {step}"
            )));
        }
        let (h, w, c) = x.dim();
        let base = x.as_array().to_owned();
        let mut grad = Array3::zeros((h, w, c));
        for v in 0..h {
            for u in 0..w {
                for ch in 0..c {
                    let mut plus = base.clone();
                    plus[(v, u, ch)] += step;
                    let mut minus = base.clone();
                    minus[(v, u, ch)] -= step;
                    // Probe points may leave [0,1]; evaluate on the raw values
                    // so the derivative is of the unclamped objective.
                    let fp = self.value(&ImageBuffer::from_array_unchecked(plus))?;
                    let fm = self.value(&ImageBuffer::from_array_unchecked(minus))?;
                    grad[(v, u, ch)] = (fp - fm) / (2.0 * step);
                }
            }
        }
        Ok(grad)
    }

    pub fn describe(&self) -> String {
        match self {
            Objective::LinearProbe { .. } => "linear-probe".into(),
            Objective::ClassifierMargin { away, toward, .. } => {
                format!("classifier-margin({away}->{toward})")
            }
            Objective::TranslationRealness { .. } => "translation-realness".into(),
            Objective::OutputMatch { .. } => "output-match".into(),
            Objective::Blackbox(inner) => format!("blackbox({})", inner.describe()),
        }
    }
}

fn check_probe_dims(weights: &Array3<f64>, x: &ImageBuffer) -> Result<()> {
    if weights.dim() != x.dim() {
        return Err(Error::dim(
            format!("{:?}", weights.dim()),
            format!("{:?}", x.dim()),
        ));
    }
    Ok(())
}

fn check_class(clf: &ToyClassifier, class: usize) -> Result<()> {
    if class >= clf.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "class index {class} out of range for {} classes",
            clf.num_classes()
        )));
    }
    Ok(())
}

/// (C, H, W) gradient back to image layout; when the image had one channel
/// the replicated channels' contributions sum.
pub(crate) fn chw_to_hwc(t: &Tensor, channels: usize) -> Array3<f64> {
    let (_, h, w) = t.dim();
    if channels == 1 {
        Array3::from_shape_fn((h, w, 1), |(v, u, _)| {
            t[(0, v, u)] + t[(1, v, u)] + t[(2, v, u)]
        })
    } else {
        Array3::from_shape_fn((h, w, channels), |(v, u, c)| t[(c, v, u)])
    }
}
