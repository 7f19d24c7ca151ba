//! Declarative experiment configs and the train→attack→evaluate pipeline.
//!
//! An [`ExperimentConfig`] names a dataset, a model, one attack with its
//! budget, the attacked domain, and when the attack strikes (at inference
//! against a frozen model, or at training time by corrupting the reference
//! targets). [`run_experiment`] executes it end to end and writes a CSV +
//! JSON report plus the per-image artifacts figures are rendered from.
//! Everything is seeded: the same config produces byte-identical CSV
//! reports on every run.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::physical::{MappingLoss, TransformGrid};
use crate::attack::universal::compute_universal_perturbation;
use crate::budget::{AttackDomain, FlowBudget, UniversalBudget};
use crate::container;
use crate::dataset::{make_synthetic_dataset, DatasetSpec, PairedDataset};
use crate::error::{Error, Result};
use crate::image_buffer::Perturbation;
use crate::models::train::{
    train_cycle, train_domain_classifier, train_paired, ClassifierTrainConfig, TargetAttack,
    TrainConfig,
};
use crate::models::Im2ImModel;
use crate::pngio;
use crate::report::{
    evaluate_flow_attack, evaluate_physical_attack, evaluate_training_attack,
    evaluate_universal_attack, rows_to_csv, Aggregates, AttackEvaluation, MetricRow,
};

/// When the attack strikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackTiming {
    /// Attack a frozen, already-trained model.
    Inference,
    /// Corrupt the reference targets the model is trained against.
    Training,
}

impl Default for AttackTiming {
    fn default() -> Self {
        AttackTiming::Inference
    }
}

impl fmt::Display for AttackTiming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackTiming::Inference => "inference",
            AttackTiming::Training => "training",
        })
    }
}

/// Translation-model family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    /// Conditional generator + discriminator trained on aligned pairs.
    Paired,
    /// Two generators with a cycle-consistency term; pairing ignored.
    Cycle,
}

impl Default for ModelFamily {
    fn default() -> Self {
        ModelFamily::Paired
    }
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_learning_rate() -> f64 {
    TrainConfig::default().learning_rate
}

fn default_l1_weight() -> f64 {
    TrainConfig::default().l1_weight
}

fn default_cycle_weight() -> f64 {
    TrainConfig::default().cycle_weight
}

fn default_model_seed() -> u64 {
    TrainConfig::default().seed
}

/// How to obtain the translation model: train one from scratch (the
/// default) or load a previously saved checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub family: ModelFamily,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_l1_weight")]
    pub l1_weight: f64,
    #[serde(default = "default_cycle_weight")]
    pub cycle_weight: f64,
    #[serde(default = "default_model_seed")]
    pub seed: u64,
    /// When set, load the model from this checkpoint base path instead of
    /// training (training-time attacks still retrain the attacked copy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_from: Option<PathBuf>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            family: ModelFamily::default(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            l1_weight: default_l1_weight(),
            cycle_weight: default_cycle_weight(),
            seed: default_model_seed(),
            load_from: None,
        }
    }
}

impl ModelSpec {
    /// The trainer configuration this spec describes, with the given
    /// target-side corruption.
    pub fn train_config(&self, target_attack: TargetAttack) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
            l1_weight: self.l1_weight,
            cycle_weight: self.cycle_weight,
            target_attack,
        }
    }

    fn train(&self, data: &PairedDataset, target_attack: TargetAttack) -> Result<Im2ImModel> {
        let cfg = self.train_config(target_attack);
        match self.family {
            ModelFamily::Paired => train_paired(data, &cfg),
            ModelFamily::Cycle => train_cycle(data, &cfg),
        }
    }
}

/// The attack to run, with its budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttackSpec {
    /// Image-agnostic additive perturbation aggregated against the toy
    /// classifier, then measured on the translation model.
    Universal {
        budget: UniversalBudget,
        #[serde(default)]
        classifier: ClassifierTrainConfig,
    },
    /// Per-image optimized spatial warp.
    Flow { budget: FlowBudget },
    /// Grid search over physically plausible poses of the input scene.
    Physical {
        /// Pose grid; defaults to a width-scaled standard grid when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<TransformGrid>,
        #[serde(default)]
        norm: MappingLoss,
    },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Universal { .. } => "universal",
            AttackSpec::Flow { .. } => "flow",
            AttackSpec::Physical { .. } => "physical",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AttackSpec::Universal { budget, .. } => budget.validate(),
            AttackSpec::Flow { budget } => budget.validate(),
            AttackSpec::Physical { grid, .. } => {
                if let Some(g) = grid {
                    // Enumeration also enforces the cap; do it early so a
                    // bad config fails before any training starts.
                    g.enumerate().map(|_| ())
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Metric columns a config may select for figure emission. Report rows and
/// CSV files always carry every column; this list only narrows which
/// aggregate plots get drawn.
pub const METRIC_COLUMNS: [&str; 7] = [
    "PO_vs_O",
    "PO_vs_It",
    "PI_vs_Iorig",
    "psnr",
    "per_pixel_acc",
    "per_class_acc",
    "class_iou",
];

fn default_metrics() -> Vec<String> {
    METRIC_COLUMNS.iter().map(|s| s.to_string()).collect()
}

fn default_experiment_seed() -> u64 {
    7
}

/// A complete, self-contained description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    pub attack: AttackSpec,
    pub domain: AttackDomain,
    #[serde(default)]
    pub timing: AttackTiming,
    /// Metric columns to plot; defaults to all of them.
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_experiment_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Enforces the attack-surface matrix and the budget invariants.
    ///
    /// Valid combinations: a training-time attack only makes sense on the
    /// target side (the corruption enters through the reference images the
    /// model is fitted to), and the physical attack only on the input side
    /// (it re-poses the scene the generator sees).
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.attack.validate()?;
        if self.timing == AttackTiming::Training && self.domain != AttackDomain::Target {
            return Err(Error::Config(
                "training-time attacks corrupt the reference targets the model is fitted \
                 to, so they require domain = \"target\""
                    .into(),
            ));
        }
        if matches!(self.attack, AttackSpec::Physical { .. })
            && self.domain != AttackDomain::Input
        {
            return Err(Error::Config(
                "the physical attack re-poses the scene the generator sees, so it \
                 requires domain = \"input\""
                    .into(),
            ));
        }
        if self.timing == AttackTiming::Training && self.model.family == ModelFamily::Cycle {
            return Err(Error::Config(
                "target-side training corruption is only defined for paired training; \
                 the cycle trainer has no fitted target to corrupt".into(),
            ));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config(
                "metrics must not be empty; omit the field to request every column".into(),
            ));
        }
        for m in &self.metrics {
            if !METRIC_COLUMNS.contains(&m.as_str()) {
                return Err(Error::Config(format!(
                    "unknown metric {m:?}; valid metrics: {}",
                    METRIC_COLUMNS.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad JSON config: {e}")))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("bad TOML config: {e}")))
    }

    /// Reads a config from disk, accepting TOML or JSON. The extension
    /// picks the parser; unknown extensions try TOML first, then JSON.
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&raw),
            Some("toml") => Self::from_toml_str(&raw),
            _ => Self::from_toml_str(&raw).or_else(|toml_err| {
                Self::from_json_str(&raw).map_err(|json_err| {
                    Error::Config(format!(
                        "config is neither valid TOML nor valid JSON: {toml_err}; {json_err}"
                    ))
                })
            }),
        }
    }
}

/// Wall-clock phase timings of one experiment, in seconds. These are the
/// only non-deterministic fields a report carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct WallClock {
    /// Obtaining the clean model (zero when the cache already had it).
    pub train_seconds: f64,
    /// Running the attack and computing every metric row.
    pub attack_seconds: f64,
    pub total_seconds: f64,
}

/// Everything one experiment produced: the config that ran, the per-image
/// metric rows, their aggregates, the files written, and phase timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricRow>,
    pub aggregates: Aggregates,
    /// Paths relative to the config's output directory.
    pub artifacts: Vec<String>,
    pub wall_clock: WallClock,
}

impl AttackReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Container(format!("cannot serialize report: {e}")))?;
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| Error::Container(format!("bad report JSON: {e}")))
    }
}

static CLEAN_MODEL_CACHE: OnceLock<Mutex<HashMap<String, Arc<Im2ImModel>>>> = OnceLock::new();

fn cache() -> &'static Mutex<HashMap<String, Arc<Im2ImModel>>> {
    CLEAN_MODEL_CACHE.get_or_init(Mutex::default)
}

/// Number of clean models currently cached in this process.
pub fn clean_model_cache_len() -> usize {
    cache().lock().expect("model cache poisoned").len()
}

/// Trains (or loads) the clean translation model for a (dataset, model)
/// pair, caching it in-process so paired comparisons — attacked training
/// vs clean training, or several attacks on one testbed — reuse one
/// baseline instead of retraining it per experiment.
pub fn clean_model(
    dataset: &DatasetSpec,
    model: &ModelSpec,
    data: &PairedDataset,
) -> Result<Arc<Im2ImModel>> {
    let key = serde_json::to_string(&(dataset, model))
        .map_err(|e| Error::Container(format!("cannot key model cache: {e}")))?;
    if let Some(hit) = cache().lock().expect("model cache poisoned").get(&key) {
        return Ok(Arc::clone(hit));
    }
    let trained = match &model.load_from {
        Some(base) => Im2ImModel::load(base)?,
        None => model.train(data, TargetAttack::None)?,
    };
    let arc = Arc::new(trained);
    let mut guard = cache().lock().expect("model cache poisoned");
    let entry = guard.entry(key).or_insert_with(|| Arc::clone(&arc));
    Ok(Arc::clone(entry))
}

/// Runs one experiment end to end: builds the dataset, obtains the models,
/// runs the configured attack on every image (or retrains with corrupted
/// targets for training-time attacks), computes all metrics, and writes
/// the report files. Fully deterministic given the config's seeds — only
/// the wall-clock fields differ between runs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AttackReport> {
    config.validate()?;
    let t_total = Instant::now();
    let data = make_synthetic_dataset(&config.dataset)?;
    fs::create_dir_all(&config.out_dir)?;

    let t_train = Instant::now();
    let model = clean_model(&config.dataset, &config.model, &data)?;
    let train_seconds = t_train.elapsed().as_secs_f64();

    let t_attack = Instant::now();
    let (eval, extra) = match config.timing {
        AttackTiming::Inference => run_inference_attack(config, &model, &data)?,
        AttackTiming::Training => run_training_attack(config, &model, &data)?,
    };
    let attack_seconds = t_attack.elapsed().as_secs_f64();

    let mut artifacts = write_image_artifacts(&config.out_dir, &eval, &data, config.domain)?;
    artifacts.extend(extra.write(&config.out_dir)?);

    let csv = rows_to_csv(&eval.rows);
    fs::write(config.out_dir.join("report.csv"), csv)?;
    artifacts.push("report.csv".into());
    artifacts.push("report.json".into());

    let report = AttackReport {
        config: config.clone(),
        aggregates: Aggregates::from_rows(&eval.rows),
        rows: eval.rows,
        artifacts,
        wall_clock: WallClock {
            train_seconds,
            attack_seconds,
            total_seconds: t_total.elapsed().as_secs_f64(),
        },
    };
    report.save_json(&config.out_dir.join("report.json"))?;
    Ok(report)
}

/// Attack-specific artifacts beyond the per-image PNGs.
enum ExtraArtifacts {
    None,
    Universal(Box<Perturbation>),
}

impl ExtraArtifacts {
    fn write(&self, out: &Path) -> Result<Vec<String>> {
        match self {
            ExtraArtifacts::None => Ok(Vec::new()),
            ExtraArtifacts::Universal(pert) => {
                let delta = pert.delta();
                let dims = delta.dim();
                container::write_container(
                    &out.join("perturbation.bin"),
                    &[dims.0, dims.1, dims.2],
                    delta.as_slice().expect("perturbations are contiguous"),
                    container::Dtype::F64,
                )?;
                pngio::save_png(
                    &out.join("perturbation.png"),
                    &pngio::perturbation_to_image(pert),
                )?;
                Ok(vec!["perturbation.bin".into(), "perturbation.png".into()])
            }
        }
    }
}

fn run_inference_attack(
    config: &ExperimentConfig,
    model: &Im2ImModel,
    data: &PairedDataset,
) -> Result<(AttackEvaluation, ExtraArtifacts)> {
    match &config.attack {
        AttackSpec::Universal { budget, classifier } => {
            let clf = train_domain_classifier(data, config.domain, classifier)?;
            let result = compute_universal_perturbation(&clf, data, config.domain, budget)?;
            let eval = evaluate_universal_attack(model, data, &result, config.domain)?;
            Ok((eval, ExtraArtifacts::Universal(Box::new(result.pert))))
        }
        AttackSpec::Flow { budget } => {
            let eval = evaluate_flow_attack(model, data, budget, config.domain, config.seed)?;
            Ok((eval, ExtraArtifacts::None))
        }
        AttackSpec::Physical { grid, norm } => {
            let grid = match grid {
                Some(g) => g.clone(),
                None => {
                    let (_, w, _) = data.image_dim();
                    TransformGrid::default_for_width(w)
                }
            };
            let eval = evaluate_physical_attack(model, data, &grid, *norm)?;
            Ok((eval, ExtraArtifacts::None))
        }
    }
}

fn run_training_attack(
    config: &ExperimentConfig,
    clean: &Im2ImModel,
    data: &PairedDataset,
) -> Result<(AttackEvaluation, ExtraArtifacts)> {
    let (target_attack, extra) = match &config.attack {
        AttackSpec::Universal { budget, classifier } => {
            // The surrogate classifier must be accurate on the images it
            // attacks, which are the targets here.
            let clf = train_domain_classifier(data, AttackDomain::Target, classifier)?;
            let result =
                compute_universal_perturbation(&clf, data, AttackDomain::Target, budget)?;
            (
                TargetAttack::Additive(result.pert.clone()),
                ExtraArtifacts::Universal(Box::new(result.pert)),
            )
        }
        AttackSpec::Flow { budget } => (
            TargetAttack::Warp {
                xi_f: budget.xi_f,
                seed: config.seed,
            },
            ExtraArtifacts::None,
        ),
        AttackSpec::Physical { .. } => {
            unreachable!("validate() rejects physical attacks at training time")
        }
    };
    let attacked = config.model.train(data, target_attack.clone())?;
    let eval = evaluate_training_attack(clean, &attacked, data, &target_attack)?;
    Ok((eval, extra))
}

/// Writes the per-image PNGs figure rendering needs: the attacked image,
/// both outputs, and the clean image of the attacked domain — plus flow
/// visualizations and raw flow containers when the attack produced flows.
fn write_image_artifacts(
    out: &Path,
    eval: &AttackEvaluation,
    data: &PairedDataset,
    domain: AttackDomain,
) -> Result<Vec<String>> {
    let images = out.join("images");
    fs::create_dir_all(&images)?;
    let mut paths = Vec::new();
    // The evaluations emit one row per dataset pair, in order; image_id is
    // the pair index.
    for (i, row) in eval.rows.iter().enumerate() {
        debug_assert_eq!(row.image_id, i);
        let pair = &data.pairs()[i];
        let clean = match domain {
            AttackDomain::Input => &pair.input,
            AttackDomain::Target => &pair.target,
        };
        let stem = format!("{i:03}");
        let entries: [(&str, &crate::image_buffer::ImageBuffer); 4] = [
            ("perturbed", &eval.perturbed[i]),
            ("attacked_out", &eval.attacked_outputs[i]),
            ("clean_out", &eval.clean_outputs[i]),
            ("clean", clean),
        ];
        for (tag, img) in entries {
            let rel = format!("images/{stem}_{tag}.png");
            pngio::save_png(&out.join(&rel), img)?;
            paths.push(rel);
        }
    }
    if let Some(flows) = &eval.flows {
        let flow_dir = out.join("flows");
        fs::create_dir_all(&flow_dir)?;
        for (i, flow) in flows.iter().enumerate() {
            let viz = format!("flows/{i:03}_flow.png");
            pngio::save_png(&out.join(&viz), &pngio::flow_to_image(flow))?;
            let raw = format!("flows/{i:03}_flow.bin");
            container::save_flow(&out.join(&raw), flow.du(), flow.dv())?;
            paths.push(viz);
            paths.push(raw);
        }
    }
    Ok(paths)
}

/// The additive-budget sweep the stock experiments use (max-norm budgets
/// quoted on the 0–255 scale).
pub const XI_SWEEP: [f64; 5] = [10.0, 200.0, 500.0, 1000.0, 2000.0];

/// The flow-budget sweep (pixels of displacement).
pub const XI_F_SWEEP: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// Standard rotation grid of the physical search: eight half-degree steps.
pub fn rotation_sweep() -> Vec<f64> {
    (0..8).map(|i| i as f64 * 0.5).collect()
}

/// Configs that vary only the attack budget of `base` along its stock
/// sweep. Universal attacks sweep the additive budget, flow attacks the
/// displacement budget. The physical attack explores its whole pose grid
/// inside a single search, so its "sweep" is the base config alone.
pub fn sweep_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    match &base.attack {
        AttackSpec::Universal { budget, classifier } => XI_SWEEP
            .iter()
            .map(|&xi| {
                let mut c = base.clone();
                c.attack = AttackSpec::Universal {
                    budget: UniversalBudget { xi, ..*budget },
                    classifier: classifier.clone(),
                };
                c.out_dir = base.out_dir.join(format!("xi_{xi:.0}"));
                c
            })
            .collect(),
        AttackSpec::Flow { budget } => XI_F_SWEEP
            .iter()
            .map(|&xi_f| {
                let mut c = base.clone();
                c.attack = AttackSpec::Flow {
                    budget: FlowBudget { xi_f, ..*budget },
                };
                c.out_dir = base.out_dir.join(format!("xif_{xi_f:.0}"));
                c
            })
            .collect(),
        AttackSpec::Physical { .. } => vec![base.clone()],
    }
}

/// The stock testbed: one 32-image, 32×32 shape-translation task attacked
/// three ways at inference time. Every config shares the dataset and model,
/// so the clean model trains once and is reused from the cache.
pub fn default_suite(out_root: &Path) -> Vec<ExperimentConfig> {
    let dataset = DatasetSpec {
        n: 32,
        height: 32,
        width: 32,
        classes: 8,
        seed: 5,
        background_examples: true,
        ..DatasetSpec::shapes(32, 32, 32, 8, 5)
    };
    let model = ModelSpec::default();
    let base = |attack: AttackSpec, domain: AttackDomain, dir: &str| ExperimentConfig {
        dataset: dataset.clone(),
        model: model.clone(),
        attack,
        domain,
        timing: AttackTiming::Inference,
        metrics: default_metrics(),
        seed: 7,
        out_dir: out_root.join(dir),
    };
    vec![
        base(
            AttackSpec::Universal {
                budget: UniversalBudget::new(2000.0, crate::image_buffer::NormOrder::LInf, 0.2)
                    .expect("stock budget is valid"),
                classifier: ClassifierTrainConfig::default(),
            },
            AttackDomain::Input,
            "universal",
        ),
        base(
            AttackSpec::Flow {
                budget: FlowBudget {
                    xi_f: 2.0,
                    lambda_flow: 0.05,
                    iters: 60,
                },
            },
            AttackDomain::Input,
            "flow",
        ),
        base(
            AttackSpec::Physical {
                grid: None,
                norm: MappingLoss::L2,
            },
            AttackDomain::Input,
            "physical",
        ),
    ]
}

/// Runs every config of [`default_suite`] in order and returns the reports.
pub fn run_default_suite(out_root: &Path) -> Result<Vec<AttackReport>> {
    default_suite(out_root).iter().map(run_experiment).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_buffer::NormOrder;

    fn tiny_dataset() -> DatasetSpec {
        DatasetSpec::shapes(3, 12, 12, 4, 9)
    }

    fn fast_model() -> ModelSpec {
        ModelSpec {
            epochs: 4,
            ..ModelSpec::default()
        }
    }

    fn flow_config(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset: tiny_dataset(),
            model: fast_model(),
            attack: AttackSpec::Flow {
                budget: FlowBudget {
                    xi_f: 1.0,
                    lambda_flow: 0.05,
                    iters: 8,
                },
            },
            domain: AttackDomain::Input,
            timing: AttackTiming::Inference,
            metrics: default_metrics(),
            seed: 3,
            out_dir: out.to_path_buf(),
        }
    }

    #[test]
    fn the_attack_surface_matrix_is_enforced_exhaustively() {
        let dir = tempfile::tempdir().unwrap();
        let attacks = [
            AttackSpec::Universal {
                budget: UniversalBudget::new(100.0, NormOrder::LInf, 0.2).unwrap(),
                classifier: ClassifierTrainConfig::default(),
            },
            AttackSpec::Flow {
                budget: FlowBudget {
                    xi_f: 1.0,
                    lambda_flow: 0.05,
                    iters: 4,
                },
            },
            AttackSpec::Physical {
                grid: None,
                norm: MappingLoss::L2,
            },
        ];
        let domains = [AttackDomain::Input, AttackDomain::Target];
        let timings = [AttackTiming::Inference, AttackTiming::Training];
        for attack in &attacks {
            for &domain in &domains {
                for &timing in &timings {
                    let cfg = ExperimentConfig {
                        dataset: tiny_dataset(),
                        model: fast_model(),
                        attack: attack.clone(),
                        domain,
                        timing,
                        metrics: default_metrics(),
                        seed: 1,
                        out_dir: dir.path().to_path_buf(),
                    };
                    let training_ok =
                        timing == AttackTiming::Inference || domain == AttackDomain::Target;
                    let physical_ok = !matches!(attack, AttackSpec::Physical { .. })
                        || domain == AttackDomain::Input;
                    let expect_ok = training_ok && physical_ok;
                    assert_eq!(
                        cfg.validate().is_ok(),
                        expect_ok,
                        "attack={} domain={domain:?} timing={timing}",
                        attack.name()
                    );
                }
            }
        }
    }

    #[test]
    fn toml_and_json_configs_parse_to_the_same_experiment() {
        let toml_src = r#"
            domain = "input"
            seed = 3
            out_dir = "/tmp/exp"

            [dataset]
            kind = "shapes"
            n = 3
            height = 12
            width = 12
            classes = 4
            seed = 9

            [model]
            epochs = 4

            [attack]
            kind = "flow"

            [attack.budget]
            xi_f = 1.0
            iters = 8
        "#;
        let json_src = r#"{
            "domain": "input",
            "seed": 3,
            "out_dir": "/tmp/exp",
            "dataset": {"kind": "shapes", "n": 3, "height": 12, "width": 12,
                        "classes": 4, "seed": 9},
            "model": {"epochs": 4},
            "attack": {"kind": "flow", "budget": {"xi_f": 1.0, "iters": 8}}
        }"#;
        let from_toml = ExperimentConfig::from_toml_str(toml_src).unwrap();
        let from_json = ExperimentConfig::from_json_str(json_src).unwrap();
        assert_eq!(from_toml, from_json);
        assert_eq!(from_toml.metrics, default_metrics());
        assert!(from_toml.validate().is_ok());

        // Defaults fill in: lambda came from the budget's stock value.
        match from_toml.attack {
            AttackSpec::Flow { budget } => assert_eq!(budget.lambda_flow, 0.05),
            _ => panic!("parsed the wrong attack"),
        }
    }

    #[test]
    fn a_flow_experiment_is_deterministic_and_writes_its_artifacts() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let report_a = run_experiment(&flow_config(dir_a.path())).unwrap();
        let report_b = run_experiment(&flow_config(dir_b.path())).unwrap();

        let csv_a = fs::read(dir_a.path().join("report.csv")).unwrap();
        let csv_b = fs::read(dir_b.path().join("report.csv")).unwrap();
        assert!(!csv_a.is_empty());
        assert_eq!(csv_a, csv_b, "identical configs must yield identical CSV bytes");

        assert_eq!(report_a.rows.len(), 3);
        for art in &report_a.artifacts {
            assert!(
                dir_a.path().join(art).is_file(),
                "missing declared artifact {art}"
            );
        }
        // Four per-image PNGs plus a viz and a container per flow, plus
        // the two report files.
        assert!(report_a
            .artifacts
            .iter()
            .any(|a| a.ends_with("_flow.png")));
        assert!(report_a.artifacts.contains(&"report.csv".to_string()));

        // The JSON round-trips and the aggregates match the rows.
        let loaded = AttackReport::load_json(&dir_a.path().join("report.json")).unwrap();
        assert_eq!(loaded.rows.len(), report_a.rows.len());
        let recomputed = Aggregates::from_rows(&loaded.rows);
        assert!((recomputed.po_vs_o.mean - loaded.aggregates.po_vs_o.mean).abs() < 1e-12);
        assert_eq!(report_b.rows.len(), 3);
    }

    #[test]
    fn a_training_time_experiment_compares_against_the_cached_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            dataset: tiny_dataset(),
            model: fast_model(),
            attack: AttackSpec::Flow {
                budget: FlowBudget {
                    xi_f: 2.0,
                    lambda_flow: 0.05,
                    iters: 8,
                },
            },
            domain: AttackDomain::Target,
            timing: AttackTiming::Training,
            metrics: default_metrics(),
            seed: 11,
            out_dir: dir.path().to_path_buf(),
        };
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            assert_eq!(row.attack, "flow-training");
            assert_eq!(row.domain, AttackDomain::Target);
            // The corrupted targets genuinely moved.
            assert!(row.pi_vs_iorig > 0.0);
        }
        // The clean baseline model for this (dataset, model) pair is cached.
        let data = make_synthetic_dataset(&cfg.dataset).unwrap();
        let before = Instant::now();
        let _ = clean_model(&cfg.dataset, &cfg.model, &data).unwrap();
        assert!(clean_model_cache_len() >= 1);
        assert!(
            before.elapsed().as_secs_f64() < 0.5,
            "cache hit should not retrain"
        );
    }

    #[test]
    fn a_universal_experiment_writes_the_shared_perturbation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::shapes(4, 12, 12, 4, 9),
            model: fast_model(),
            attack: AttackSpec::Universal {
                budget: UniversalBudget::new(500.0, NormOrder::LInf, 0.2).unwrap(),
                classifier: ClassifierTrainConfig {
                    epochs: 10,
                    ..ClassifierTrainConfig::default()
                },
            },
            domain: AttackDomain::Input,
            timing: AttackTiming::Inference,
            metrics: default_metrics(),
            seed: 2,
            out_dir: dir.path().to_path_buf(),
        };
        let report = run_experiment(&cfg).unwrap();
        assert!(dir.path().join("perturbation.bin").is_file());
        assert!(dir.path().join("perturbation.png").is_file());
        assert!(report.rows.iter().all(|r| r.attack == "universal"));
        let pert = container::read_container(&dir.path().join("perturbation.bin")).unwrap();
        assert_eq!(pert.shape, vec![12, 12, 3]);
    }

    #[test]
    fn sweeps_vary_exactly_the_budget() {
        let dir = tempfile::tempdir().unwrap();
        let base = flow_config(dir.path());
        let sweep = sweep_configs(&base);
        assert_eq!(sweep.len(), XI_F_SWEEP.len());
        for (cfg, &xi_f) in sweep.iter().zip(XI_F_SWEEP.iter()) {
            match &cfg.attack {
                AttackSpec::Flow { budget } => {
                    assert_eq!(budget.xi_f, xi_f);
                    assert_eq!(budget.iters, 8, "non-budget fields must carry over");
                }
                _ => panic!("sweep changed the attack kind"),
            }
            assert_ne!(cfg.out_dir, base.out_dir);
        }
        let suite = default_suite(dir.path());
        assert_eq!(suite.len(), 3);
        for cfg in &suite {
            cfg.validate().unwrap();
        }
    }
}
