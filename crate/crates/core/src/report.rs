//! Per-image evaluation rows for the three attacks, their aggregate
//! statistics, and deterministic CSV emission.
//!
//! A row always measures the same roles: `PO` the output generated from the
//! attacked artifact, `O` the clean output, `I_t` the expected target, and
//! `PI`/`I_orig` the attacked image against its clean version. For
//! target-domain attacks at inference time the generator never sees the
//! perturbation, so `PO = O` and the interesting columns are the ones
//! involving the perturbed target itself.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::flow::optimize_flow;
use crate::attack::physical::{search_transform, MappingLoss, TransformGrid};
use crate::attack::universal::UniversalResult;
use crate::budget::{AttackDomain, FlowBudget};
use crate::dataset::{derive_seed, DatasetPair, PairedDataset};
use crate::error::{Error, Result};
use crate::image_buffer::{apply_perturbation, ImageBuffer};
use crate::metrics::{label_outputs, psnr, seg_scores, DefaultPerceptual, PerceptualDistance};
use crate::models::train::{training_target, TargetAttack};
use crate::models::Im2ImModel;
use crate::warp::{apply_similarity, FlowField};

/// One evaluated image. The ten CSV fields come first; the optional fields
/// are attack-specific diagnostics carried in the JSON report only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: usize,
    pub attack: String,
    pub domain: AttackDomain,
    /// Perceptual distance between the attacked output and the clean output.
    pub po_vs_o: f64,
    /// Perceptual distance between the attacked output and the target.
    pub po_vs_it: f64,
    /// Perceptual distance between the attacked image and its clean version.
    pub pi_vs_iorig: f64,
    /// PSNR (dB) of the attacked image against its clean version.
    pub psnr: f64,
    pub per_pixel_acc: f64,
    pub per_class_acc: f64,
    pub class_iou: f64,
    /// Did the discriminator's real/fake decision flip under the attack?
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub decision_flip: Option<bool>,
    /// Raw discriminator score change (attacked minus clean).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score_delta: Option<f64>,
    /// Winning pose of the physical search, as `du,dv,theta_deg,sx,sy`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub transform: Option<String>,
    /// Physical search best/identity loss ratio (1.0 = nothing gained).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_ratio: Option<f64>,
}

/// Exact CSV column set and order; every report row prints all ten.
pub const CSV_HEADER: &str =
    "image_id,attack,domain,PO_vs_O,PO_vs_It,PI_vs_Iorig,psnr,per_pixel_acc,per_class_acc,class_iou";

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.image_id,
            self.attack,
            self.domain,
            self.po_vs_o,
            self.po_vs_it,
            self.pi_vs_iorig,
            self.psnr,
            self.per_pixel_acc,
            self.per_class_acc,
            self.class_iou
        )
    }
}

/// Serializes rows to CSV text with the fixed header; the same rows always
/// produce the same bytes.
pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (divided by N, not N-1).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.max(0.0).sqrt(),
        }
    }
}

/// Mean and spread of every numeric report column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub po_vs_o: MeanStd,
    pub po_vs_it: MeanStd,
    pub pi_vs_iorig: MeanStd,
    pub psnr: MeanStd,
    pub per_pixel_acc: MeanStd,
    pub per_class_acc: MeanStd,
    pub class_iou: MeanStd,
}

impl Aggregates {
    pub fn from_rows(rows: &[MetricRow]) -> Self {
        let col = |f: fn(&MetricRow) -> f64| -> MeanStd {
            MeanStd::of(&rows.iter().map(f).collect::<Vec<_>>())
        };
        Aggregates {
            po_vs_o: col(|r| r.po_vs_o),
            po_vs_it: col(|r| r.po_vs_it),
            pi_vs_iorig: col(|r| r.pi_vs_iorig),
            psnr: col(|r| r.psnr),
            per_pixel_acc: col(|r| r.per_pixel_acc),
            per_class_acc: col(|r| r.per_class_acc),
            class_iou: col(|r| r.class_iou),
        }
    }

    /// Looks an aggregate up by its CSV column name.
    pub fn column(&self, name: &str) -> Option<MeanStd> {
        match name {
            "PO_vs_O" => Some(self.po_vs_o),
            "PO_vs_It" => Some(self.po_vs_it),
            "PI_vs_Iorig" => Some(self.pi_vs_iorig),
            "psnr" => Some(self.psnr),
            "per_pixel_acc" => Some(self.per_pixel_acc),
            "per_class_acc" => Some(self.per_class_acc),
            "class_iou" => Some(self.class_iou),
            _ => None,
        }
    }
}

/// Looks a row's metric up by its CSV column name.
pub fn metric_value(row: &MetricRow, name: &str) -> Option<f64> {
    match name {
        "PO_vs_O" => Some(row.po_vs_o),
        "PO_vs_It" => Some(row.po_vs_it),
        "PI_vs_Iorig" => Some(row.pi_vs_iorig),
        "psnr" => Some(row.psnr),
        "per_pixel_acc" => Some(row.per_pixel_acc),
        "per_class_acc" => Some(row.per_class_acc),
        "class_iou" => Some(row.class_iou),
        _ => None,
    }
}

/// A finished evaluation: report rows plus the images they were computed
/// from, so figures can be rendered without re-running the attack.
#[derive(Debug, Clone)]
pub struct AttackEvaluation {
    pub rows: Vec<MetricRow>,
    /// The attacked image per pair (perturbed input or perturbed target).
    pub perturbed: Vec<ImageBuffer>,
    /// The output generated from the attacked artifact (equals
    /// `clean_outputs` for inference-time target-domain attacks).
    pub attacked_outputs: Vec<ImageBuffer>,
    pub clean_outputs: Vec<ImageBuffer>,
    /// Per-image optimized flows; populated by the flow attack only.
    pub flows: Option<Vec<FlowField>>,
}

fn require_trained_model(model: &Im2ImModel) -> Result<()> {
    if model.meta.epochs == 0 {
        return Err(Error::Capability(
            "evaluation needs a trained translation model".into(),
        ));
    }
    Ok(())
}

/// Everything shared by one row computation.
struct RowInputs<'a> {
    image_id: usize,
    attack: &'a str,
    domain: AttackDomain,
    pair: &'a DatasetPair,
    /// The attacked image (same domain as `domain`).
    perturbed: &'a ImageBuffer,
    clean_output: &'a ImageBuffer,
    /// Output generated from the attacked artifact.
    attacked_output: &'a ImageBuffer,
    target_palette: &'a [[f64; 3]],
}

fn metric_row(metric: &dyn PerceptualDistance, inp: &RowInputs<'_>) -> Result<MetricRow> {
    let (clean_image, seg_source): (&ImageBuffer, &ImageBuffer) = match inp.domain {
        AttackDomain::Input => (&inp.pair.input, inp.attacked_output),
        AttackDomain::Target => (&inp.pair.target, inp.attacked_output),
    };
    let pred: Array2<u8> = label_outputs(seg_source, inp.target_palette)?;
    let seg = seg_scores(&pred, &inp.pair.seg_labels, inp.target_palette.len())?;
    Ok(MetricRow {
        image_id: inp.image_id,
        attack: inp.attack.to_string(),
        domain: inp.domain,
        po_vs_o: metric.distance(inp.attacked_output, inp.clean_output)?,
        po_vs_it: metric.distance(inp.attacked_output, &inp.pair.target)?,
        pi_vs_iorig: metric.distance(inp.perturbed, clean_image)?,
        psnr: psnr(inp.perturbed, clean_image)?,
        per_pixel_acc: seg.per_pixel_acc,
        per_class_acc: seg.per_class_acc,
        class_iou: seg.class_iou,
        decision_flip: None,
        score_delta: None,
        transform: None,
        loss_ratio: None,
    })
}

/// Discriminator realness score of an image in the attacked domain: for the
/// input domain the verdict on the image's own generated output, for the
/// target domain the verdict on the image itself under the pair's clean
/// input.
fn domain_score(
    model: &Im2ImModel,
    pair: &DatasetPair,
    img: &ImageBuffer,
    domain: AttackDomain,
) -> Result<f64> {
    match domain {
        AttackDomain::Input => model.discriminator_score(img, &model.generate(img)?),
        AttackDomain::Target => model.discriminator_score(&pair.input, img),
    }
}

/// Measures an image-agnostic additive perturbation against the translation
/// model: every pair is perturbed in the attacked domain, translated where
/// applicable, and scored. Decision flips follow the discriminator's hard
/// 0.5 threshold; raw score deltas ride along in the JSON rows.
pub fn evaluate_universal_attack(
    model: &Im2ImModel,
    data: &PairedDataset,
    result: &UniversalResult,
    domain: AttackDomain,
) -> Result<AttackEvaluation> {
    require_trained_model(model)?;
    if result.domain != domain {
        return Err(Error::Config(format!(
            "perturbation was built for the {} domain but evaluation asked for {domain}",
            result.domain
        )));
    }
    let palette = data.target_palette().to_vec();
    let metric = DefaultPerceptual::new();
    let mut rows = Vec::with_capacity(data.len());
    let mut perturbed_images = Vec::with_capacity(data.len());
    let mut attacked_outputs = Vec::with_capacity(data.len());
    let mut clean_outputs = Vec::with_capacity(data.len());

    let computed: Vec<_> = data
        .pairs()
        .par_iter()
        .enumerate()
        .map(|(i, pair)| -> Result<_> {
            let clean_image = match domain {
                AttackDomain::Input => &pair.input,
                AttackDomain::Target => &pair.target,
            };
            let perturbed = apply_perturbation(clean_image, &result.pert)?;
            let clean_output = model.generate(&pair.input)?;
            let attacked_output = match domain {
                AttackDomain::Input => model.generate(&perturbed)?,
                AttackDomain::Target => clean_output.clone(),
            };
            let s_clean = domain_score(model, pair, clean_image, domain)?;
            let s_pert = domain_score(model, pair, &perturbed, domain)?;
            let mut row = metric_row(
                &metric,
                &RowInputs {
                    image_id: i,
                    attack: "universal",
                    domain,
                    pair,
                    perturbed: &perturbed,
                    clean_output: &clean_output,
                    attacked_output: &attacked_output,
                    target_palette: &palette,
                },
            )?;
            row.decision_flip = Some((s_pert >= 0.5) != (s_clean >= 0.5));
            row.score_delta = Some(s_pert - s_clean);
            Ok((row, perturbed, attacked_output, clean_output))
        })
        .collect::<Result<_>>()?;

    for (row, p, ao, co) in computed {
        rows.push(row);
        perturbed_images.push(p);
        attacked_outputs.push(ao);
        clean_outputs.push(co);
    }
    Ok(AttackEvaluation {
        rows,
        perturbed: perturbed_images,
        attacked_outputs,
        clean_outputs,
        flows: None,
    })
}

/// Runs the flow attack on every pair and scores the warped results. The
/// optimizer's own score bookkeeping supplies the decision flags.
pub fn evaluate_flow_attack(
    model: &Im2ImModel,
    data: &PairedDataset,
    budget: &FlowBudget,
    domain: AttackDomain,
    seed: u64,
) -> Result<AttackEvaluation> {
    require_trained_model(model)?;
    budget.validate()?;
    if data.is_empty() {
        return Err(Error::Data("evaluation needs at least one pair".into()));
    }
    let palette = data.target_palette().to_vec();
    let metric = DefaultPerceptual::new();

    let computed: Vec<_> = data
        .pairs()
        .par_iter()
        .enumerate()
        .map(|(i, pair)| -> Result<_> {
            let res = optimize_flow(model, pair, domain, budget, derive_seed(seed, i as u64))?;
            let clean_output = model.generate(&pair.input)?;
            let attacked_output = match domain {
                AttackDomain::Input => model.generate(&res.perturbed)?,
                AttackDomain::Target => clean_output.clone(),
            };
            let mut row = metric_row(
                &metric,
                &RowInputs {
                    image_id: i,
                    attack: "flow",
                    domain,
                    pair,
                    perturbed: &res.perturbed,
                    clean_output: &clean_output,
                    attacked_output: &attacked_output,
                    target_palette: &palette,
                },
            )?;
            row.decision_flip =
                Some((res.score_attacked >= 0.5) != (res.score_clean >= 0.5));
            row.score_delta = Some(res.score_attacked - res.score_clean);
            Ok((row, res.flow, res.perturbed, attacked_output, clean_output))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(computed.len());
    let mut flows = Vec::with_capacity(computed.len());
    let mut perturbed = Vec::with_capacity(computed.len());
    let mut attacked_outputs = Vec::with_capacity(computed.len());
    let mut clean_outputs = Vec::with_capacity(computed.len());
    for (row, fl, p, ao, co) in computed {
        rows.push(row);
        flows.push(fl);
        perturbed.push(p);
        attacked_outputs.push(ao);
        clean_outputs.push(co);
    }
    Ok(AttackEvaluation {
        rows,
        perturbed,
        attacked_outputs,
        clean_outputs,
        flows: Some(flows),
    })
}

/// Grid-searches the most damaging pose per image and scores its outputs.
/// This attack only makes sense on the input side, so there is no domain
/// parameter; rows carry the winning pose and the best/identity loss ratio.
pub fn evaluate_physical_attack(
    model: &Im2ImModel,
    data: &PairedDataset,
    grid: &TransformGrid,
    norm: MappingLoss,
) -> Result<AttackEvaluation> {
    require_trained_model(model)?;
    if data.is_empty() {
        return Err(Error::Data("evaluation needs at least one pair".into()));
    }
    let palette = data.target_palette().to_vec();
    let metric = DefaultPerceptual::new();

    // The pose search parallelizes internally; keep the image loop serial so
    // the two levels do not contend.
    let mut rows = Vec::with_capacity(data.len());
    let mut perturbed = Vec::with_capacity(data.len());
    let mut attacked_outputs = Vec::with_capacity(data.len());
    let mut clean_outputs = Vec::with_capacity(data.len());
    for (i, pair) in data.pairs().iter().enumerate() {
        let search = search_transform(model, &pair.input, &pair.target, grid, norm, 0.0)?;
        let posed = apply_similarity(&pair.input, &search.best_params, 0.0)?;
        let clean_output = model.generate(&pair.input)?;
        let attacked_output = model.generate(&posed)?;
        let mut row = metric_row(
            &metric,
            &RowInputs {
                image_id: i,
                attack: "physical",
                domain: AttackDomain::Input,
                pair,
                perturbed: &posed,
                clean_output: &clean_output,
                attacked_output: &attacked_output,
                target_palette: &palette,
            },
        )?;
        let (du, dv, th, sx, sy) = search.best_params.as_tuple();
        row.transform = Some(format!(
            "{du:.3},{dv:.3},{:.3},{sx:.3},{sy:.3}",
            th.to_degrees()
        ));
        row.loss_ratio = Some(if search.identity_loss > 0.0 {
            search.best_loss / search.identity_loss
        } else if search.best_loss > 0.0 {
            f64::INFINITY
        } else {
            1.0
        });
        rows.push(row);
        perturbed.push(posed);
        attacked_outputs.push(attacked_output);
        clean_outputs.push(clean_output);
    }
    Ok(AttackEvaluation {
        rows,
        perturbed,
        attacked_outputs,
        clean_outputs,
        flows: None,
    })
}

/// Compares a model trained on corrupted targets against the clean-trained
/// baseline, image by image. Here the "attacked output" comes from the
/// corrupted-training model and the "perturbed image" is the corrupted
/// target the trainer actually fitted against — recomputed exactly, not
/// stored during training.
pub fn evaluate_training_attack(
    clean_model: &Im2ImModel,
    attacked_model: &Im2ImModel,
    data: &PairedDataset,
    attack: &TargetAttack,
) -> Result<AttackEvaluation> {
    require_trained_model(clean_model)?;
    require_trained_model(attacked_model)?;
    if data.is_empty() {
        return Err(Error::Data("evaluation needs at least one pair".into()));
    }
    let palette = data.target_palette().to_vec();
    let metric = DefaultPerceptual::new();
    let attack_name = match attack {
        TargetAttack::None => "clean-training",
        TargetAttack::Additive(_) => "additive-training",
        TargetAttack::Warp { .. } => "flow-training",
    };

    let computed: Vec<_> = data
        .pairs()
        .par_iter()
        .enumerate()
        .map(|(i, pair)| -> Result<_> {
            let corrupted_target = training_target(pair, i, attack)?;
            let clean_output = clean_model.generate(&pair.input)?;
            let attacked_output = attacked_model.generate(&pair.input)?;
            let row = metric_row(
                &metric,
                &RowInputs {
                    image_id: i,
                    attack: attack_name,
                    domain: AttackDomain::Target,
                    pair,
                    perturbed: &corrupted_target,
                    clean_output: &clean_output,
                    attacked_output: &attacked_output,
                    target_palette: &palette,
                },
            )?;
            Ok((row, corrupted_target, attacked_output, clean_output))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(computed.len());
    let mut perturbed = Vec::with_capacity(computed.len());
    let mut attacked_outputs = Vec::with_capacity(computed.len());
    let mut clean_outputs = Vec::with_capacity(computed.len());
    for (row, p, ao, co) in computed {
        rows.push(row);
        perturbed.push(p);
        attacked_outputs.push(ao);
        clean_outputs.push(co);
    }
    Ok(AttackEvaluation {
        rows,
        perturbed,
        attacked_outputs,
        clean_outputs,
        flows: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::universal::compute_universal_perturbation;
    use crate::budget::UniversalBudget;
    use crate::dataset::{make_synthetic_dataset, DatasetSpec};
    use crate::image_buffer::NormOrder;
    use crate::models::train::{train_classifier, train_paired, ClassifierTrainConfig, TrainConfig};

    fn fixture() -> (Im2ImModel, PairedDataset) {
        let data = make_synthetic_dataset(&DatasetSpec {
            kind: crate::dataset::DatasetKind::Shapes,
            n: 4,
            height: 12,
            width: 12,
            classes: 4,
            seed: 9,
            background_examples: false,
            name: None,
        })
        .unwrap();
        let model = train_paired(
            &data,
            &TrainConfig {
                epochs: 4,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        (model, data)
    }

    #[test]
    fn zero_perturbation_rows_are_all_identity() {
        let (model, data) = fixture();
        let zero = UniversalResult {
            pert: crate::image_buffer::Perturbation::zeros(12, 12, 3),
            domain: AttackDomain::Input,
            achieved_fooling_rate: 0.0,
            passes_used: 0,
            budget: UniversalBudget::new(10.0, NormOrder::LInf, 0.2).unwrap(),
            passes: vec![],
            skipped: 0,
        };
        let eval = evaluate_universal_attack(&model, &data, &zero, AttackDomain::Input).unwrap();
        assert_eq!(eval.rows.len(), data.len());
        for row in &eval.rows {
            assert_eq!(row.po_vs_o, 0.0, "clean output must equal attacked output");
            assert_eq!(row.decision_flip, Some(false));
            assert_eq!(row.psnr, crate::metrics::PSNR_CAP);
        }
        // domain mismatch is rejected
        assert!(matches!(
            evaluate_universal_attack(&model, &data, &zero, AttackDomain::Target),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn universal_rows_report_perturbation_distances() {
        let (model, data) = fixture();
        let clf = train_classifier(
            &data,
            &ClassifierTrainConfig {
                epochs: 12,
                ..ClassifierTrainConfig::default()
            },
        )
        .unwrap();
        let budget = UniversalBudget::new(2000.0, NormOrder::LInf, 0.5).unwrap();
        let res = compute_universal_perturbation(&clf, &data, AttackDomain::Input, &budget).unwrap();
        let eval = evaluate_universal_attack(&model, &data, &res, AttackDomain::Input).unwrap();
        assert_eq!(eval.rows.len(), 4);
        // CSV is deterministic and exactly ten columns wide
        let csv = rows_to_csv(&eval.rows);
        assert!(csv.starts_with(CSV_HEADER));
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), 10, "line: {line}");
        }
        let eval2 = evaluate_universal_attack(&model, &data, &res, AttackDomain::Input).unwrap();
        assert_eq!(csv, rows_to_csv(&eval2.rows));
    }

    #[test]
    fn aggregates_recompose_from_rows() {
        let rows: Vec<MetricRow> = (0..5)
            .map(|i| MetricRow {
                image_id: i,
                attack: "flow".into(),
                domain: AttackDomain::Input,
                po_vs_o: i as f64 * 0.1,
                po_vs_it: 0.3,
                pi_vs_iorig: 1.0 / (i + 1) as f64,
                psnr: 30.0 + i as f64,
                per_pixel_acc: 0.5,
                per_class_acc: 0.25,
                class_iou: 0.125,
                decision_flip: None,
                score_delta: None,
                transform: None,
                loss_ratio: None,
            })
            .collect();
        let agg = Aggregates::from_rows(&rows);
        let mean: f64 = rows.iter().map(|r| r.po_vs_o).sum::<f64>() / 5.0;
        assert!((agg.po_vs_o.mean - mean).abs() < 1e-12);
        let var: f64 = rows
            .iter()
            .map(|r| (r.po_vs_o - mean) * (r.po_vs_o - mean))
            .sum::<f64>()
            / 5.0;
        assert!((agg.po_vs_o.std - var.sqrt()).abs() < 1e-12);
        assert_eq!(agg.po_vs_it.std, 0.0);
    }

    #[test]
    fn untrained_model_is_rejected_everywhere() {
        let (_, data) = fixture();
        let untrained = Im2ImModel::untrained_paired(12, 12, 3).unwrap();
        let budget = FlowBudget::new(1.0).unwrap();
        assert!(matches!(
            evaluate_flow_attack(&untrained, &data, &budget, AttackDomain::Input, 0),
            Err(Error::Capability(_))
        ));
        let grid = TransformGrid {
            translations_u: vec![0.0, 1.0],
            translations_v: vec![0.0],
            rotations_deg: vec![0.0],
            scales_x: vec![1.0],
            scales_y: vec![1.0],
        };
        assert!(matches!(
            evaluate_physical_attack(&untrained, &data, &grid, MappingLoss::L1),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn physical_rows_carry_pose_and_ratio() {
        let (model, data) = fixture();
        let grid = TransformGrid {
            translations_u: vec![-1.0, 0.0, 1.0],
            translations_v: vec![0.0],
            rotations_deg: vec![0.0, 1.0],
            scales_x: vec![1.0],
            scales_y: vec![1.0],
        };
        let eval = evaluate_physical_attack(&model, &data, &grid, MappingLoss::L1).unwrap();
        for row in &eval.rows {
            assert!(row.transform.is_some());
            assert!(row.loss_ratio.unwrap() >= 1.0 - 1e-12);
            assert_eq!(row.attack, "physical");
        }
    }
}
