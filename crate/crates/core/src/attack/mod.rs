//! The three attack families: image-agnostic additive perturbations,
//! per-image spatial flows, and quasi-physical pose search.

pub mod flow;
pub mod physical;
pub mod universal;

pub use flow::{
    fit_constant_shift, flow_attack_input, flow_attack_objective, flow_attack_target,
    flow_match_reference, optimize_flow, optimize_flow_with, FlowAttackConfig, FlowAttackResult,
    GradMode,
};
pub use physical::{
    image_discrepancy, mapping_loss, search_transform, MappingLoss, PhysicalSearchResult,
    TransformGrid, TransformScore, GRID_CAP,
};
pub use universal::{
    compute_universal_perturbation, fooling_rate, fooling_rate_over,
    minimal_per_image_perturbation, project_lp, ClassifierOracle, MinimalPerturbation, PassStats,
    UniversalResult, DEFAULT_OVERSHOOT,
};
