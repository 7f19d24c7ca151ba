//! Adversarial perturbation testbed for image-to-image translation.
//!
//! The crate trains small deterministic translation models on synthetic
//! paired data and attacks them three ways: an image-agnostic additive
//! perturbation aggregated over a dataset, a per-image spatial flow field
//! optimized against the model, and a quasi-physical similarity-transform
//! search. Everything is CPU-only, seeded, and reproducible bit for bit.

pub mod attack;
pub mod budget;
pub mod container;
pub mod dataset;
pub mod error;
pub mod image_buffer;
pub mod metrics;
pub mod models;
pub mod pngio;
pub mod experiment;
pub mod figures;
pub mod report;
pub mod warp;

pub use budget::{AttackDomain, FlowBudget, UniversalBudget};
pub use dataset::{DatasetKind, DatasetSpec, PairedDataset};
pub use error::{Error, Result};
pub use image_buffer::{apply_perturbation, lp_norm, ImageBuffer, NormOrder, Perturbation};
pub use models::{Im2ImModel, ToyClassifier, TrainingMeta};
pub use warp::{FlowField, SimilarityParams};
