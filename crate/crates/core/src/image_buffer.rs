use ndarray::{Array3, Zip};

use crate::error::{Error, Result};

/// Dense float image in `[0, 1]`, laid out `(height, width, channels)`.
///
/// Dimensions are fixed at construction. Every operation that could push
/// values outside `[0, 1]` clamps before handing back a new buffer, so a
/// value taken out of an `ImageBuffer` is always a valid intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    values: Array3<f64>,
}

impl ImageBuffer {
    /// Builds a buffer from raw values, validating range and channel count.
    pub fn from_array(values: Array3<f64>) -> Result<Self> {
        let (h, w, c) = values.dim();
        if h == 0 || w == 0 {
            return Err(Error::Data(format!("empty image: {h}x{w}")));
        }
        if c != 1 && c != 3 {
            return Err(Error::Data(format!(
                "channel count must be 1 or 3, got {c}"
            )));
        }
        for &v in values.iter() {
            if !v.is_finite() {
                return Err(Error::Data("non-finite pixel value".into()));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
            }
        }
        Ok(Self { values })
    }

    /// Builds a buffer from raw values, clamping each into `[0, 1]`.
    /// Non-finite values are rejected.
    pub fn from_array_clamped(values: Array3<f64>) -> Result<Self> {
        let mut values = values;
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(Error::Data("non-finite pixel value".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Self::from_array(values)
    }

    /// Wraps values without the `[0, 1]` range check. Only for probing
    /// objectives at off-range points (finite-difference oracles); shape and
    /// finiteness are the caller's responsibility.
    pub(crate) fn from_array_unchecked(values: Array3<f64>) -> Self {
        Self { values }
    }

    /// Uniform image of the given intensity.
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::from_array(Array3::from_elem((height, width, channels), value))
    }

    /// Fills each pixel from `f(row, col, channel)`, clamping into `[0, 1]`.
    pub fn from_fn<F>(height: usize, width: usize, channels: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> f64,
    {
        Self::from_array_clamped(Array3::from_shape_fn((height, width, channels), |(v, u, c)| {
            f(v, u, c)
        }))
    }

    pub fn height(&self) -> usize {
        self.values.dim().0
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    /// (height, width, channels)
    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row, col, channel)]
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.values
    }

    /// Mean absolute difference over all values; shapes must match.
    pub fn mean_abs_diff(&self, other: &ImageBuffer) -> Result<f64> {
        check_same_dim(self.dim(), other.dim())?;
        let n = self.values.len() as f64;
        let mut acc = 0.0;
        Zip::from(&self.values).and(&other.values).for_each(|a, b| {
            acc += (a - b).abs();
        });
        Ok(acc / n)
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> Vec<f64> {
        let (h, w, c) = self.dim();
        let n = (h * w) as f64;
        (0..c)
            .map(|ch| self.values.slice(ndarray::s![.., .., ch]).sum() / n)
            .collect()
    }
}

/// Signed additive perturbation with the same layout as an image.
///
/// Values are stored unclamped; clamping happens only when the perturbation
/// is applied to an image, so budget projections always see the raw field.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    delta: Array3<f64>,
}

impl Perturbation {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            delta: Array3::zeros((height, width, channels)),
        }
    }

    pub fn from_array(delta: Array3<f64>) -> Result<Self> {
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite perturbation value".into()));
        }
        Ok(Self { delta })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.delta.dim()
    }

    pub fn delta(&self) -> &Array3<f64> {
        &self.delta
    }

    pub fn delta_mut(&mut self) -> &mut Array3<f64> {
        &mut self.delta
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&v| v == 0.0)
    }

    /// Element-wise sum of two perturbations of the same shape.
    pub fn add(&self, other: &Perturbation) -> Result<Perturbation> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(Perturbation {
            delta: &self.delta + &other.delta,
        })
    }
}

/// Norm order for perturbation budgets. A sparsity-constrained order is
/// deliberately absent: it is not representable here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    L2,
    LInf,
}

impl NormOrder {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2" | "l2" => Ok(NormOrder::L2),
            "inf" | "linf" | "infinity" => Ok(NormOrder::LInf),
            "0" | "l0" => Err(Error::InvalidArgument(
                "sparsity-constrained norm order is not implemented; use 2 or inf".into(),
            )),
            other => Err(Error::InvalidArgument(format!(
                "unknown norm order {other:?}; use 2 or inf"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NormOrder::L2 => "2",
            NormOrder::LInf => "inf",
        }
    }
}

impl serde::Serialize for NormOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> serde::Deserialize<'de> for NormOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        NormOrder::parse(&raw).map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for NormOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// `clamp(image + delta, 0, 1)`; the stored perturbation is not modified.
pub fn apply_perturbation(image: &ImageBuffer, pert: &Perturbation) -> Result<ImageBuffer> {
    check_same_dim(image.dim(), pert.dim())?;
    let mut out = image.as_array().clone();
    Zip::from(&mut out).and(pert.delta()).for_each(|v, d| {
        *v = (*v + d).clamp(0.0, 1.0);
    });
    ImageBuffer::from_array(out)
}

/// Norm of the raw (unclamped) perturbation field.
pub fn lp_norm(pert: &Perturbation, p: NormOrder) -> f64 {
    lp_norm_values(pert.delta().iter().copied(), p)
}

pub(crate) fn lp_norm_values(values: impl Iterator<Item = f64>, p: NormOrder) -> f64 {
    match p {
        NormOrder::L2 => values.map(|v| v * v).sum::<f64>().sqrt(),
        NormOrder::LInf => values.fold(0.0_f64, |m, v| m.max(v.abs())),
    }
}

pub(crate) fn check_same_dim(a: (usize, usize, usize), b: (usize, usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{a:?}"), format!("{b:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: f64) -> ImageBuffer {
        ImageBuffer::constant(h, w, 3, v).unwrap()
    }

    #[test]
    fn rejects_out_of_range_and_bad_channels() {
        let arr = Array3::from_elem((2, 2, 3), 1.5);
        assert!(matches!(ImageBuffer::from_array(arr), Err(Error::Data(_))));
        let arr = Array3::from_elem((2, 2, 2), 0.5);
        assert!(matches!(ImageBuffer::from_array(arr), Err(Error::Data(_))));
        let arr = Array3::from_elem((0, 2, 3), 0.5);
        assert!(matches!(ImageBuffer::from_array(arr), Err(Error::Data(_))));
    }

    #[test]
    fn apply_clamps_at_both_ends() {
        // gray 0.5 plus +0.7 saturates to 1.0, minus 0.7 to 0.0
        let img = gray(2, 2, 0.5);
        let mut up = Perturbation::zeros(2, 2, 3);
        up.delta_mut().fill(0.7);
        let hi = apply_perturbation(&img, &up).unwrap();
        assert!(hi.as_array().iter().all(|&v| v == 1.0));

        let mut down = Perturbation::zeros(2, 2, 3);
        down.delta_mut().fill(-0.7);
        let lo = apply_perturbation(&img, &down).unwrap();
        assert!(lo.as_array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_keeps_stored_delta_unclamped() {
        let img = gray(2, 2, 0.5);
        let mut p = Perturbation::zeros(2, 2, 3);
        p.delta_mut().fill(0.7);
        let _ = apply_perturbation(&img, &p).unwrap();
        assert!(p.delta().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn apply_rejects_shape_mismatch() {
        let img = gray(2, 2, 0.5);
        let p = Perturbation::zeros(3, 2, 3);
        assert!(matches!(
            apply_perturbation(&img, &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let img = ImageBuffer::from_fn(4, 5, 3, |v, u, c| {
            (v as f64 * 0.13 + u as f64 * 0.07 + c as f64 * 0.21).fract()
        })
        .unwrap();
        let z = Perturbation::zeros(4, 5, 3);
        let out = apply_perturbation(&img, &z).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn lp_norms_match_hand_values() {
        let mut p = Perturbation::zeros(1, 2, 1);
        p.delta_mut()[(0, 0, 0)] = 3.0;
        p.delta_mut()[(0, 1, 0)] = -4.0;
        assert!((lp_norm(&p, NormOrder::L2) - 5.0).abs() < 1e-12);
        assert!((lp_norm(&p, NormOrder::LInf) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn norm_order_parsing() {
        assert_eq!(NormOrder::parse("inf").unwrap(), NormOrder::LInf);
        assert_eq!(NormOrder::parse("2").unwrap(), NormOrder::L2);
        assert!(NormOrder::parse("0").is_err());
        assert!(NormOrder::parse("7").is_err());
    }
}
