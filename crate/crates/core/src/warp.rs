//! Differentiable geometry: bilinear sampling, backward flow warps, the
//! total-variation flow smoothness loss, per-pixel flow projection, and
//! similarity transforms.
//!
//! Coordinates: `u` is the column index (rightward), `v` the row index
//! (downward). Flow is backward: the output pixel at `(u, v)` is sampled
//! from the source at `(u + du, v + dv)`.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::budget::FlowBudget;
use crate::error::{Error, Result};
use crate::image_buffer::ImageBuffer;

/// Per-pixel displacement field, one `(du, dv)` vector per output pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    du: Array2<f64>,
    dv: Array2<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            du: Array2::zeros((height, width)),
            dv: Array2::zeros((height, width)),
        }
    }

    pub fn from_arrays(du: Array2<f64>, dv: Array2<f64>) -> Result<Self> {
        if du.dim() != dv.dim() {
            return Err(Error::dim(format!("{:?}", du.dim()), format!("{:?}", dv.dim())));
        }
        if du.iter().chain(dv.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite flow component".into()));
        }
        Ok(Self { du, dv })
    }

    /// Constant field with the same vector at every pixel.
    pub fn constant(height: usize, width: usize, du: f64, dv: f64) -> Result<Self> {
        Self::from_arrays(
            Array2::from_elem((height, width), du),
            Array2::from_elem((height, width), dv),
        )
    }

    pub fn dim(&self) -> (usize, usize) {
        self.du.dim()
    }

    pub fn du(&self) -> &Array2<f64> {
        &self.du
    }

    pub fn dv(&self) -> &Array2<f64> {
        &self.dv
    }

    pub fn magnitude(&self, row: usize, col: usize) -> f64 {
        let d = (self.du[(row, col)], self.dv[(row, col)]);
        (d.0 * d.0 + d.1 * d.1).sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        let (h, w) = self.dim();
        let mut m = 0.0_f64;
        for v in 0..h {
            for u in 0..w {
                m = m.max(self.magnitude(v, u));
            }
        }
        m
    }
}

/// Similarity transform parameters: translation in pixels, rotation in
/// radians, positive per-axis scales. The image center is the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub du: f64,
    pub dv: f64,
    pub theta: f64,
    pub sx: f64,
    pub sy: f64,
}

impl SimilarityParams {
    pub const IDENTITY: SimilarityParams = SimilarityParams {
        du: 0.0,
        dv: 0.0,
        theta: 0.0,
        sx: 1.0,
        sy: 1.0,
    };

    pub fn new(du: f64, dv: f64, theta: f64, sx: f64, sy: f64) -> Result<Self> {
        let p = Self { du, dv, theta, sx, sy };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("du", self.du),
            ("dv", self.dv),
            ("theta", self.theta),
            ("sx", self.sx),
            ("sy", self.sy),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        if self.sx <= 0.0 || self.sy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scales must be positive, got sx={}, sy={}",
                self.sx, self.sy
            )));
        }
        Ok(())
    }

    /// Forward map of a center-origin point: scale . rotation . p + t.
    pub fn map_point(&self, u: f64, v: f64) -> (f64, f64) {
        let (sin, cos) = self.theta.sin_cos();
        let ru = cos * u - sin * v;
        let rv = sin * u + cos * v;
        (self.sx * ru + self.du, self.sy * rv + self.dv)
    }

    /// Inverse map of a center-origin point: rotation^-1 . scale^-1 . (p - t).
    pub fn inverse_map_point(&self, u: f64, v: f64) -> (f64, f64) {
        let su = (u - self.du) / self.sx;
        let sv = (v - self.dv) / self.sy;
        let (sin, cos) = self.theta.sin_cos();
        (cos * su + sin * sv, -sin * su + cos * sv)
    }

    /// Parameter tuple in grid order (du, dv, theta, sx, sy).
    pub fn as_tuple(&self) -> (f64, f64, f64, f64, f64) {
        (self.du, self.dv, self.theta, self.sx, self.sy)
    }
}

/// Bilinear interpolation of one channel at a continuous coordinate.
/// Coordinates are clamped into `[0, W-1] x [0, H-1]` before neighbor
/// lookup; an exact integer coordinate degenerates to that pixel.
pub fn bilinear_sample(image: &ImageBuffer, u: f64, v: f64, channel: usize) -> Result<f64> {
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite sample coordinate ({u}, {v})"
        )));
    }
    let (h, w, c) = image.dim();
    if channel >= c {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range (C={c})"
        )));
    }
    Ok(bilinear_unchecked(image.as_array(), h, w, u, v, channel))
}

#[inline]
fn bilinear_unchecked(arr: &Array3<f64>, h: usize, w: usize, u: f64, v: f64, c: usize) -> f64 {
    let uc = u.clamp(0.0, (w - 1) as f64);
    let vc = v.clamp(0.0, (h - 1) as f64);
    let x0 = uc.floor() as usize;
    let y0 = vc.floor() as usize;
    let wu = uc - x0 as f64;
    let wv = vc - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let top = (1.0 - wu) * arr[(y0, x0, c)] + wu * arr[(y0, x1, c)];
    let bottom = (1.0 - wu) * arr[(y1, x0, c)] + wu * arr[(y1, x1, c)];
    (1.0 - wv) * top + wv * bottom
}

/// Warps an image by a backward flow field.
pub fn warp_with_flow(image: &ImageBuffer, flow: &FlowField) -> Result<ImageBuffer> {
    let (h, w, c) = image.dim();
    if flow.dim() != (h, w) {
        return Err(Error::dim(format!("{:?}", (h, w)), format!("{:?}", flow.dim())));
    }
    let arr = image.as_array();
    let mut out = Array3::zeros((h, w, c));
    for v in 0..h {
        for u in 0..w {
            let su = u as f64 + flow.du[(v, u)];
            let sv = v as f64 + flow.dv[(v, u)];
            for ch in 0..c {
                out[(v, u, ch)] =
                    bilinear_unchecked(arr, h, w, su, sv, ch).clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::from_array(out)
}

/// Gradient of `sum(upstream * warp_with_flow(image, flow))` with respect to
/// each flow component. `upstream` is the incoming gradient per output
/// value; pixels whose sample point is clamped get zero gradient there.
pub fn warp_flow_gradient(
    image: &ImageBuffer,
    flow: &FlowField,
    upstream: &Array3<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (h, w, c) = image.dim();
    if flow.dim() != (h, w) {
        return Err(Error::dim(format!("{:?}", (h, w)), format!("{:?}", flow.dim())));
    }
    if upstream.dim() != (h, w, c) {
        return Err(Error::dim(
            format!("{:?}", (h, w, c)),
            format!("{:?}", upstream.dim()),
        ));
    }
    let arr = image.as_array();
    let mut gu = Array2::zeros((h, w));
    let mut gv = Array2::zeros((h, w));
    for v in 0..h {
        for u in 0..w {
            let su = u as f64 + flow.du[(v, u)];
            let sv = v as f64 + flow.dv[(v, u)];
            let u_active = su > 0.0 && su < (w - 1) as f64;
            let v_active = sv > 0.0 && sv < (h - 1) as f64;
            let uc = su.clamp(0.0, (w - 1) as f64);
            let vc = sv.clamp(0.0, (h - 1) as f64);
            let x0 = uc.floor() as usize;
            let y0 = vc.floor() as usize;
            let wu = uc - x0 as f64;
            let wv = vc - y0 as f64;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let mut du_acc = 0.0;
            let mut dv_acc = 0.0;
            for ch in 0..c {
                let g = upstream[(v, u, ch)];
                if g == 0.0 {
                    continue;
                }
                let i00 = arr[(y0, x0, ch)];
                let i01 = arr[(y0, x1, ch)];
                let i10 = arr[(y1, x0, ch)];
                let i11 = arr[(y1, x1, ch)];
                if u_active {
                    let d_du = (1.0 - wv) * (i01 - i00) + wv * (i11 - i10);
                    du_acc += g * d_du;
                }
                if v_active {
                    let d_dv = (1.0 - wu) * (i10 - i00) + wu * (i11 - i01);
                    dv_acc += g * d_dv;
                }
            }
            gu[(v, u)] = du_acc;
            gv[(v, u)] = dv_acc;
        }
    }
    Ok((gu, gv))
}

/// Total-variation smoothness of a flow field: every pixel sums the l2
/// lengths of the flow differences to its in-image 4-neighbors, so each
/// adjacent pair is counted from both sides.
pub fn flow_tv_loss(flow: &FlowField) -> f64 {
    let (h, w) = flow.dim();
    let mut total = 0.0;
    for v in 0..h {
        for u in 0..w {
            for (nv, nu) in neighbors4(v, u, h, w) {
                let ddu = flow.du[(v, u)] - flow.du[(nv, nu)];
                let ddv = flow.dv[(v, u)] - flow.dv[(nv, nu)];
                total += (ddu * ddu + ddv * ddv).sqrt();
            }
        }
    }
    total
}

/// Gradient of `flow_tv_loss` with respect to each flow component.
/// Pairs with exactly zero difference contribute a zero subgradient.
pub fn flow_tv_gradient(flow: &FlowField) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = flow.dim();
    let mut gu = Array2::zeros((h, w));
    let mut gv = Array2::zeros((h, w));
    for v in 0..h {
        for u in 0..w {
            for (nv, nu) in neighbors4(v, u, h, w) {
                let ddu = flow.du[(v, u)] - flow.du[(nv, nu)];
                let ddv = flow.dv[(v, u)] - flow.dv[(nv, nu)];
                let r = (ddu * ddu + ddv * ddv).sqrt();
                if r > 0.0 {
                    // both ordered pairs (i,j) and (j,i) depend on f_i
                    gu[(v, u)] += 2.0 * ddu / r;
                    gv[(v, u)] += 2.0 * ddv / r;
                }
            }
        }
    }
    (gu, gv)
}

fn neighbors4(v: usize, u: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut out = [(0usize, 0usize); 4];
    let mut n = 0;
    if v > 0 {
        out[n] = (v - 1, u);
        n += 1;
    }
    if v + 1 < h {
        out[n] = (v + 1, u);
        n += 1;
    }
    if u > 0 {
        out[n] = (v, u - 1);
        n += 1;
    }
    if u + 1 < w {
        out[n] = (v, u + 1);
        n += 1;
    }
    out.into_iter().take(n)
}

/// Clamps every per-pixel flow vector to l2 length at most `xi_f`,
/// preserving direction. Idempotent.
pub fn project_flow(flow: &FlowField, budget: &FlowBudget) -> FlowField {
    let (h, w) = flow.dim();
    let mut du = flow.du.clone();
    let mut dv = flow.dv.clone();
    for v in 0..h {
        for u in 0..w {
            let m = (du[(v, u)] * du[(v, u)] + dv[(v, u)] * dv[(v, u)]).sqrt();
            if m > budget.xi_f {
                let f = budget.xi_f / m;
                du[(v, u)] *= f;
                dv[(v, u)] *= f;
            }
        }
    }
    FlowField { du, dv }
}

/// Deterministic low-frequency random flow: a small mixture of sinusoids per
/// component, rescaled so the strongest vector sits exactly at the budget.
/// Used to warp training targets, where no gradient signal is available to
/// optimize against.
pub fn random_smooth_flow(height: usize, width: usize, xi_f: f64, seed: u64) -> FlowField {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    if xi_f <= 0.0 || height == 0 || width == 0 {
        return FlowField::zeros(height, width);
    }
    let tau = std::f64::consts::TAU;
    let component = |rng: &mut rand_chacha::ChaCha8Rng| {
        let waves: Vec<(f64, f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.5..1.0),
                    rng.random_range(0.5..2.5),
                    rng.random_range(0.5..2.5),
                    rng.random_range(0.0..tau),
                    rng.random_range(0.0..tau),
                )
            })
            .collect();
        Array2::from_shape_fn((height, width), |(v, u)| {
            let uu = u as f64 / width.max(1) as f64;
            let vv = v as f64 / height.max(1) as f64;
            waves
                .iter()
                .map(|(a, fu, fv, pu, pv)| a * (tau * fu * uu + pu).sin() * (tau * fv * vv + pv).cos())
                .sum()
        })
    };
    let du = component(&mut rng);
    let dv = component(&mut rng);
    let flow = FlowField { du, dv };
    let peak = flow.max_magnitude();
    if peak <= 0.0 {
        return flow;
    }
    let scaled = FlowField {
        du: flow.du.mapv(|x| x * xi_f / peak),
        dv: flow.dv.mapv(|x| x * xi_f / peak),
    };
    scaled
}

/// Resamples an image under a similarity transform about the image center.
/// Destination pixels whose inverse-mapped source coordinate falls outside
/// the image are set to `fill`.
pub fn apply_similarity(
    image: &ImageBuffer,
    params: &SimilarityParams,
    fill: f64,
) -> Result<ImageBuffer> {
    params.validate()?;
    if !(0.0..=1.0).contains(&fill) {
        return Err(Error::InvalidArgument(format!(
            "fill must lie in [0, 1], got {fill}"
        )));
    }
    let (h, w, c) = image.dim();
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let arr = image.as_array();
    let mut out = Array3::zeros((h, w, c));
    for vd in 0..h {
        for ud in 0..w {
            let (su, sv) = params.inverse_map_point(ud as f64 - cx, vd as f64 - cy);
            let su_abs = su + cx;
            let sv_abs = sv + cy;
            let inside = su_abs >= 0.0
                && su_abs <= (w - 1) as f64
                && sv_abs >= 0.0
                && sv_abs <= (h - 1) as f64;
            for ch in 0..c {
                out[(vd, ud, ch)] = if inside {
                    bilinear_unchecked(arr, h, w, su_abs, sv_abs, ch).clamp(0.0, 1.0)
                } else {
                    fill
                };
            }
        }
    }
    ImageBuffer::from_array(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn quad() -> ImageBuffer {
        // [[0.1, 0.2], [0.3, 0.4]], rows = v
        let mut a = Array3::zeros((2, 2, 1));
        a[(0, 0, 0)] = 0.1;
        a[(0, 1, 0)] = 0.2;
        a[(1, 0, 0)] = 0.3;
        a[(1, 1, 0)] = 0.4;
        ImageBuffer::from_array(a).unwrap()
    }

    fn ramp_1x4() -> ImageBuffer {
        let mut a = Array3::zeros((1, 4, 1));
        for u in 0..4 {
            a[(0, u, 0)] = u as f64 * 0.1;
        }
        ImageBuffer::from_array(a).unwrap()
    }

    #[test]
    fn bilinear_integer_grid_point() {
        assert_eq!(bilinear_sample(&quad(), 0.0, 0.0, 0).unwrap(), 0.1);
    }

    #[test]
    fn bilinear_cell_center_averages_four_neighbors() {
        let got = bilinear_sample(&quad(), 0.5, 0.5, 0).unwrap();
        assert!((got - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bilinear_clamps_out_of_bounds() {
        assert_eq!(bilinear_sample(&quad(), -1.0, 0.0, 0).unwrap(), 0.1);
        assert_eq!(bilinear_sample(&quad(), 5.0, 5.0, 0).unwrap(), 0.4);
    }

    #[test]
    fn bilinear_rejects_non_finite_and_bad_channel() {
        assert!(bilinear_sample(&quad(), f64::NAN, 0.0, 0).is_err());
        assert!(bilinear_sample(&quad(), 0.0, f64::INFINITY, 0).is_err());
        assert!(bilinear_sample(&quad(), 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn zero_flow_warp_is_identity() {
        let img = ImageBuffer::from_fn(5, 7, 3, |v, u, c| {
            ((v * 13 + u * 5 + c) as f64 / 37.0).fract()
        })
        .unwrap();
        let out = warp_with_flow(&img, &FlowField::zeros(5, 7)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn ramp_shift_by_one_clamps_last_pixel() {
        let flow = FlowField::constant(1, 4, 1.0, 0.0).unwrap();
        let out = warp_with_flow(&ramp_1x4(), &flow).unwrap();
        let expected = [0.1, 0.2, 0.3, 0.3];
        for u in 0..4 {
            assert!((out.get(0, u, 0) - expected[u]).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_shift_by_half_interpolates() {
        let flow = FlowField::constant(1, 4, 0.5, 0.0).unwrap();
        let out = warp_with_flow(&ramp_1x4(), &flow).unwrap();
        let expected = [0.05, 0.15, 0.25, 0.3];
        for u in 0..4 {
            assert!((out.get(0, u, 0) - expected[u]).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_loss_hand_cases() {
        // constant field
        let f = FlowField::constant(3, 3, 0.7, -0.2).unwrap();
        assert_eq!(flow_tv_loss(&f), 0.0);

        // 1x2 field, f_1 = (0,0), f_2 = (1,0): each pixel sees one neighbor
        // at distance 1
        let f = FlowField::from_arrays(arr2(&[[0.0, 1.0]]), arr2(&[[0.0, 0.0]])).unwrap();
        assert!((flow_tv_loss(&f) - 2.0).abs() < 1e-12);

        // 3x3 field, single du spike at (0,1): hand sum = 6
        let mut du = Array2::zeros((3, 3));
        du[(0, 1)] = 1.0;
        let f = FlowField::from_arrays(du, Array2::zeros((3, 3))).unwrap();
        assert!((flow_tv_loss(&f) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn tv_loss_is_positively_homogeneous() {
        let du = arr2(&[[0.3, -0.8, 0.1], [1.2, 0.0, -0.4]]);
        let dv = arr2(&[[-0.5, 0.2, 0.9], [0.0, 0.7, -1.1]]);
        let f = FlowField::from_arrays(du.clone(), dv.clone()).unwrap();
        let f3 = FlowField::from_arrays(3.0 * &du, 3.0 * &dv).unwrap();
        assert!((flow_tv_loss(&f3) - 3.0 * flow_tv_loss(&f)).abs() < 1e-9);
    }

    #[test]
    fn project_flow_rescales_and_is_idempotent() {
        let f = FlowField::from_arrays(arr2(&[[3.0, 0.1]]), arr2(&[[4.0, 0.2]])).unwrap();
        let budget = FlowBudget::new(1.0).unwrap();
        let p = project_flow(&f, &budget);
        assert!((p.du[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((p.dv[(0, 0)] - 0.8).abs() < 1e-12);
        // vector already inside the ball is untouched
        assert_eq!(p.du[(0, 1)], 0.1);
        assert_eq!(p.dv[(0, 1)], 0.2);
        let pp = project_flow(&p, &budget);
        assert_eq!(p, pp);
        assert!(p.max_magnitude() <= budget.xi_f + 1e-6);
    }

    #[test]
    fn similarity_identity_params() {
        let img = ImageBuffer::from_fn(4, 6, 3, |v, u, c| {
            ((v * 11 + u * 3 + c) as f64 / 23.0).fract()
        })
        .unwrap();
        let out = apply_similarity(&img, &SimilarityParams::IDENTITY, 0.0).unwrap();
        for (a, b) in out.as_array().iter().zip(img.as_array().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn similarity_point_mapping_quarter_turn() {
        let p = SimilarityParams::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 1.0, 1.0).unwrap();
        let (u, v) = p.map_point(1.0, 0.0);
        assert!(u.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
        // inverse undoes forward
        let (iu, iv) = p.inverse_map_point(u, v);
        assert!((iu - 1.0).abs() < 1e-12);
        assert!(iv.abs() < 1e-12);
    }

    #[test]
    fn similarity_translation_shifts_columns_right() {
        let img = ImageBuffer::from_fn(3, 3, 1, |v, u, _| (v * 3 + u) as f64 / 10.0).unwrap();
        let p = SimilarityParams::new(1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let out = apply_similarity(&img, &p, 0.0).unwrap();
        for v in 0..3 {
            assert_eq!(out.get(v, 0, 0), 0.0);
            for u in 1..3 {
                assert!((out.get(v, u, 0) - img.get(v, u - 1, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_quarter_turn_permutes_odd_square() {
        let img = ImageBuffer::from_fn(3, 3, 1, |v, u, _| (v * 3 + u) as f64 / 10.0).unwrap();
        let p = SimilarityParams::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 1.0, 1.0).unwrap();
        let out = apply_similarity(&img, &p, 0.0).unwrap();
        // dest (ud, vd) samples source at (vd_c, -ud_c) in centered coords
        for vd in 0..3i64 {
            for ud in 0..3i64 {
                let su = (vd - 1) + 1;
                let sv = -(ud - 1) + 1;
                let expected = img.get(sv as usize, su as usize, 0);
                assert!((out.get(vd as usize, ud as usize, 0) - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn similarity_rejects_bad_params() {
        let img = ImageBuffer::constant(2, 2, 1, 0.5).unwrap();
        assert!(SimilarityParams::new(0.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(SimilarityParams::new(0.0, 0.0, f64::NAN, 1.0, 1.0).is_err());
        let p = SimilarityParams::IDENTITY;
        assert!(apply_similarity(&img, &p, 1.5).is_err());
    }

    #[test]
    fn warp_gradient_matches_finite_differences() {
        // smooth random-ish image, flow away from integer kinks
        let img = ImageBuffer::from_fn(6, 6, 3, |v, u, c| {
            0.5 + 0.3 * ((v as f64 * 0.9 + u as f64 * 0.7 + c as f64) * 0.8).sin() * 0.9
        })
        .unwrap();
        let (h, w) = (6, 6);
        let du = Array2::from_shape_fn((h, w), |(v, u)| {
            0.3 + 0.25 * ((v * 7 + u * 3) as f64 * 0.37).sin()
        });
        let dv = Array2::from_shape_fn((h, w), |(v, u)| {
            -0.4 + 0.2 * ((v * 5 + u * 11) as f64 * 0.53).cos()
        });
        let flow = FlowField::from_arrays(du, dv).unwrap();
        let upstream = Array3::from_elem((h, w, 3), 1.0);
        let (gu, gv) = warp_flow_gradient(&img, &flow, &upstream).unwrap();

        let scalar = |f: &FlowField| warp_with_flow(&img, f).unwrap().as_array().sum();
        let hstep = 1e-5;
        for &(v, u) in &[(1usize, 1usize), (2, 4), (4, 2), (3, 3)] {
            let mut fp = flow.clone();
            fp.du[(v, u)] += hstep;
            let mut fm = flow.clone();
            fm.du[(v, u)] -= hstep;
            let fd = (scalar(&fp) - scalar(&fm)) / (2.0 * hstep);
            assert!(
                (fd - gu[(v, u)]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "du ({v},{u}): fd={fd}, analytic={}",
                gu[(v, u)]
            );

            let mut fp = flow.clone();
            fp.dv[(v, u)] += hstep;
            let mut fm = flow.clone();
            fm.dv[(v, u)] -= hstep;
            let fd = (scalar(&fp) - scalar(&fm)) / (2.0 * hstep);
            assert!(
                (fd - gv[(v, u)]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "dv ({v},{u}): fd={fd}, analytic={}",
                gv[(v, u)]
            );
        }
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let du = arr2(&[[0.3, -0.8, 0.1], [1.2, 0.05, -0.4], [0.9, -0.2, 0.6]]);
        let dv = arr2(&[[-0.5, 0.2, 0.9], [0.15, 0.7, -1.1], [-0.3, 0.4, 0.25]]);
        let flow = FlowField::from_arrays(du, dv).unwrap();
        let (gu, gv) = flow_tv_gradient(&flow);
        let hstep = 1e-6;
        for v in 0..3 {
            for u in 0..3 {
                let mut fp = flow.clone();
                fp.du[(v, u)] += hstep;
                let mut fm = flow.clone();
                fm.du[(v, u)] -= hstep;
                let fd = (flow_tv_loss(&fp) - flow_tv_loss(&fm)) / (2.0 * hstep);
                assert!((fd - gu[(v, u)]).abs() < 1e-5, "du ({v},{u})");

                let mut fp = flow.clone();
                fp.dv[(v, u)] += hstep;
                let mut fm = flow.clone();
                fm.dv[(v, u)] -= hstep;
                let fd = (flow_tv_loss(&fp) - flow_tv_loss(&fm)) / (2.0 * hstep);
                assert!((fd - gv[(v, u)]).abs() < 1e-5, "dv ({v},{u})");
            }
        }
    }
}
