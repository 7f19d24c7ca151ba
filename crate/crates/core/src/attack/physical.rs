//! Quasi-physical attack: exhaustive search over a small grid of similarity
//! transforms (print pose perturbations — shifts, slight rotations, scale
//! changes) for the pose that degrades the translation most. The objective
//! is not differentiable in the pose parameters, hence the grid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image_buffer::ImageBuffer;
use crate::models::Im2ImModel;
use crate::warp::{apply_similarity, SimilarityParams};

/// Hard cap on enumerated transforms; beyond this the search would silently
/// dominate a run's budget.
pub const GRID_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingLoss {
    /// Mean absolute error.
    L1,
    /// Root mean squared error.
    L2,
}

impl Default for MappingLoss {
    fn default() -> Self {
        MappingLoss::L2
    }
}

impl MappingLoss {
    pub fn parse(s: &str) -> crate::error::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(MappingLoss::L1),
            "l2" | "2" => Ok(MappingLoss::L2),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "unknown mapping loss {other:?}; expected \"l1\" or \"l2\""
            ))),
        }
    }
}

impl std::fmt::Display for MappingLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MappingLoss::L1 => "l1",
            MappingLoss::L2 => "l2",
        })
    }
}

/// Mean elementwise discrepancy between two images: mean |d| for `L1`, root
/// mean squared difference for `L2`.
pub fn image_discrepancy(a: &ImageBuffer, b: &ImageBuffer, kind: MappingLoss) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let n = a.as_array().len() as f64;
    let mut acc = 0.0;
    for (x, y) in a.as_array().iter().zip(b.as_array().iter()) {
        let d = x - y;
        acc += match kind {
            MappingLoss::L1 => d.abs(),
            MappingLoss::L2 => d * d,
        };
    }
    Ok(match kind {
        MappingLoss::L1 => acc / n,
        MappingLoss::L2 => (acc / n).sqrt(),
    })
}

/// Translation error of the model on `x` against the expected `target`:
/// the discrepancy between `generate(model, x)` and `target`.
pub fn mapping_loss(
    model: &Im2ImModel,
    x: &ImageBuffer,
    target: &ImageBuffer,
    kind: MappingLoss,
) -> Result<f64> {
    let out = model.generate(x)?;
    image_discrepancy(&out, target, kind)
}

/// Axis-aligned product grid of pose offsets. `enumerate` flattens it into
/// a sorted, deduplicated transform list that always includes the identity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformGrid {
    /// Horizontal shifts in pixels.
    pub translations_u: Vec<f64>,
    /// Vertical shifts in pixels.
    pub translations_v: Vec<f64>,
    /// Rotations in degrees.
    pub rotations_deg: Vec<f64>,
    /// Horizontal scale factors.
    pub scales_x: Vec<f64>,
    /// Vertical scale factors.
    pub scales_y: Vec<f64>,
}

impl TransformGrid {
    /// Default pose grid, sized relative to the image width: shifts of about
    /// 4% and 8% of the width (at least one pixel), rotations up to 3.5
    /// degrees in half-degree steps, and two mild shrink factors per axis.
    pub fn default_for_width(width: usize) -> Self {
        let t1 = (width as f64 * 10.0 / 256.0).floor().max(1.0);
        let t2 = (width as f64 * 20.0 / 256.0).floor().max(1.0);
        let mut shifts = vec![-t2, -t1, 0.0, t1, t2];
        shifts.sort_by(f64::total_cmp);
        shifts.dedup();
        TransformGrid {
            translations_u: shifts.clone(),
            translations_v: shifts,
            rotations_deg: (0..8).map(|i| 0.5 * i as f64).collect(),
            scales_x: vec![0.85, 0.95],
            scales_y: vec![0.85, 0.95],
        }
    }

    /// All grid poses plus the identity, sorted lexicographically by
    /// (du, dv, theta, sx, sy) with exact duplicates removed.
    pub fn enumerate(&self) -> Result<Vec<SimilarityParams>> {
        if self.translations_u.is_empty()
            || self.translations_v.is_empty()
            || self.rotations_deg.is_empty()
            || self.scales_x.is_empty()
            || self.scales_y.is_empty()
        {
            return Err(Error::InvalidArgument(
                "every grid axis needs at least one value".into(),
            ));
        }
        let count = self.translations_u.len()
            * self.translations_v.len()
            * self.rotations_deg.len()
            * self.scales_x.len()
            * self.scales_y.len()
            + 1;
        if count > GRID_CAP {
            return Err(Error::InvalidArgument(format!(
                "transform grid holds {count} poses, above the cap of {GRID_CAP}"
            )));
        }
        let mut out = Vec::with_capacity(count);
        for &du in &self.translations_u {
            for &dv in &self.translations_v {
                for &deg in &self.rotations_deg {
                    for &sx in &self.scales_x {
                        for &sy in &self.scales_y {
                            out.push(SimilarityParams::new(du, dv, deg.to_radians(), sx, sy)?);
                        }
                    }
                }
            }
        }
        out.push(SimilarityParams::IDENTITY);
        out.sort_by(|a, b| {
            a.as_tuple()
                .partial_cmp(&b.as_tuple())
                .expect("validated params are finite")
        });
        out.dedup();
        Ok(out)
    }
}

/// One row of the search: a pose and the translation error it induces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformScore {
    pub params: SimilarityParams,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PhysicalSearchResult {
    pub best_params: SimilarityParams,
    pub best_loss: f64,
    pub identity_loss: f64,
    /// Loss for every enumerated pose, in enumeration (sorted) order.
    pub loss_table: Vec<TransformScore>,
}

/// First index holding the strictly greatest value; on exact ties the
/// earlier (lexicographically smaller pose) wins.
pub(crate) fn argmax_strict(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Evaluates every pose in the grid: the input is re-posed (blank regions
/// filled with `fill`), translated by the model, and compared against the
/// unchanged expected output. Returns the most damaging pose; the identity
/// pose is always part of the table, so `best_loss >= identity_loss` holds
/// by construction.
pub fn search_transform(
    model: &Im2ImModel,
    input: &ImageBuffer,
    expected: &ImageBuffer,
    grid: &TransformGrid,
    loss: MappingLoss,
    fill: f64,
) -> Result<PhysicalSearchResult> {
    model.check_input(input)?;
    model.check_input(expected)?;
    let poses = grid.enumerate()?;
    let losses: Vec<f64> = poses
        .par_iter()
        .map(|t| -> Result<f64> {
            let posed_in = apply_similarity(input, t, fill)?;
            mapping_loss(model, &posed_in, expected, loss)
        })
        .collect::<Result<_>>()?;

    let best_idx = argmax_strict(&losses);
    let identity_idx = poses
        .iter()
        .position(|t| *t == SimilarityParams::IDENTITY)
        .expect("enumerate always includes the identity");
    let loss_table = poses
        .iter()
        .zip(&losses)
        .map(|(t, &l)| TransformScore {
            params: *t,
            loss: l,
        })
        .collect();
    Ok(PhysicalSearchResult {
        best_params: poses[best_idx],
        best_loss: losses[best_idx],
        identity_loss: losses[identity_idx],
        loss_table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn default_grid_scales_with_width_and_includes_identity() {
        let g256 = TransformGrid::default_for_width(256);
        assert_eq!(g256.translations_u, vec![-20.0, -10.0, 0.0, 10.0, 20.0]);
        let g32 = TransformGrid::default_for_width(32);
        assert_eq!(g32.translations_u, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let poses = g32.enumerate().unwrap();
        assert_eq!(poses.len(), 5 * 5 * 8 * 2 * 2 + 1);
        assert!(poses.contains(&SimilarityParams::IDENTITY));
        // sorted lexicographically
        for w in poses.windows(2) {
            assert!(w[0].as_tuple() <= w[1].as_tuple());
        }
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let grid = TransformGrid {
            translations_u: (0..25).map(|i| i as f64).collect(),
            translations_v: (0..25).map(|i| i as f64).collect(),
            rotations_deg: (0..8).map(|i| i as f64).collect(),
            scales_x: vec![0.9, 1.0, 1.1],
            scales_y: vec![1.0],
        };
        assert!(matches!(
            grid.enumerate(),
            Err(Error::InvalidArgument(_))
        ));
        let empty = TransformGrid {
            translations_u: vec![],
            translations_v: vec![0.0],
            rotations_deg: vec![0.0],
            scales_x: vec![1.0],
            scales_y: vec![1.0],
        };
        assert!(empty.enumerate().is_err());
    }

    #[test]
    fn argmax_strict_prefers_the_first_of_equal_maxima() {
        assert_eq!(argmax_strict(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_strict(&[5.0]), 0);
    }

    #[test]
    fn discrepancy_hand_values() {
        let a = ImageBuffer::constant(2, 2, 3, 0.25).unwrap();
        let b = ImageBuffer::constant(2, 2, 3, 0.75).unwrap();
        assert!((image_discrepancy(&a, &b, MappingLoss::L1).unwrap() - 0.5).abs() < 1e-15);
        // root mean square of a constant 0.5 difference is 0.5
        assert!((image_discrepancy(&a, &b, MappingLoss::L2).unwrap() - 0.5).abs() < 1e-15);
        let c = ImageBuffer::constant(2, 3, 3, 0.75).unwrap();
        assert!(image_discrepancy(&a, &c, MappingLoss::L1).is_err());
    }

    #[test]
    fn search_is_deterministic_and_never_below_identity() {
        let model = Im2ImModel::untrained_paired(16, 16, 7).unwrap();
        let input = ImageBuffer::from_array(Array3::from_shape_fn((16, 16, 3), |(v, u, c)| {
            0.2 + 0.04 * ((u + 2 * v + 3 * c) % 13) as f64
        }))
        .unwrap();
        let expected = model.generate(&input).unwrap();
        let grid = TransformGrid {
            translations_u: vec![-1.0, 0.0, 1.0],
            translations_v: vec![0.0],
            rotations_deg: vec![0.0, 1.0],
            scales_x: vec![0.95, 1.0],
            scales_y: vec![1.0],
        };
        let r1 = search_transform(&model, &input, &expected, &grid, MappingLoss::L1, 0.5).unwrap();
        let r2 = search_transform(&model, &input, &expected, &grid, MappingLoss::L1, 0.5).unwrap();
        assert!(r1.best_loss >= r1.identity_loss);
        assert_eq!(r1.best_params, r2.best_params);
        assert_eq!(r1.best_loss, r2.best_loss);
        // the (0, 0, 0deg, 1.0, 1.0) grid point IS the identity, so the
        // appended identity deduplicates away
        assert_eq!(r1.loss_table.len(), 3 * 2 * 2);
        for (a, b) in r1.loss_table.iter().zip(r2.loss_table.iter()) {
            assert_eq!(a.loss, b.loss, "loss table must be bit-stable");
        }
        // identity expected-vs-output: searching against the model's own
        // clean output makes the identity loss exactly zero.
        assert_eq!(r1.identity_loss, 0.0);
    }

    #[test]
    fn best_pose_matches_an_independent_enumeration() {
        let model = Im2ImModel::untrained_paired(12, 12, 21).unwrap();
        let input = ImageBuffer::from_array(Array3::from_shape_fn((12, 12, 3), |(v, u, c)| {
            0.15 + 0.05 * ((2 * u + v + c) % 11) as f64
        }))
        .unwrap();
        let expected = ImageBuffer::constant(12, 12, 3, 0.4).unwrap();
        let grid = TransformGrid {
            translations_u: vec![-1.0, 0.0, 1.0],
            translations_v: vec![0.0],
            rotations_deg: vec![0.0],
            scales_x: vec![1.0],
            scales_y: vec![1.0],
        };
        let res = search_transform(&model, &input, &expected, &grid, MappingLoss::L2, 0.0).unwrap();

        // independent brute force through the public one-pose operations
        let mut best: Option<(f64, SimilarityParams)> = None;
        for t in grid.enumerate().unwrap() {
            let posed = apply_similarity(&input, &t, 0.0).unwrap();
            let l = mapping_loss(&model, &posed, &expected, MappingLoss::L2).unwrap();
            if best.as_ref().map_or(true, |(bl, _)| l > *bl) {
                best = Some((l, t));
            }
        }
        let (bl, bp) = best.unwrap();
        assert_eq!(res.best_loss, bl);
        assert_eq!(res.best_params, bp);
    }
}
