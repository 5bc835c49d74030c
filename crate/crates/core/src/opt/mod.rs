//! The plan super-optimizer: semantic, logical, and physical phases, applied
//! in that order, each validated empirically before its rewrite is kept.

pub mod logical;
pub mod physical;
pub mod reasoner;
pub mod semantic;

pub use logical::{apply_logical, derive_cheap_filter, rule_crop_before_downscale,
                   split_conjunctive_filter};
pub use physical::{adaptive_prune, estimate_cost, select_models, AdaptivePruner, CostEstimate,
                    DensityStats, PrunePolicy};
pub use reasoner::{ExternalReasoner, Reasoner, ReasonerConfig, ReasonerMode, ScriptedReasoner};
pub use semantic::{compute_skip_amount, empirical_validate, extract_world_knowledge,
                    select_operators, semantic_optimize, update_plan, CandidateOp, Facts,
                    Relevance, SpatialPrior, TemporalPrior, ValidationResult};

use crate::datagen::{SampleSummary, StreamEvent, StreamMeta};
use crate::exec::ExecConfig;
use crate::model::Catalog;
use crate::plan::{Plan, QueryId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("{0}")]
    Exec(#[from] crate::exec::ExecError),
    #[error("{0}")]
    Plan(#[from] crate::plan::PlanError),
    #[error("{0}")]
    Model(#[from] crate::model::ModelError),
    #[error("non-positive {0}")]
    NonPositiveInput(&'static str),
    #[error("sample too small: {got} frames, need >= {need}")]
    SampleTooSmall { got: usize, need: usize },
    #[error("reasoner: {0}")]
    Reasoner(String),
}

/// Everything the optimization phases need about the query's environment:
/// the stream sample they calibrate against, the catalog, and cost policy.
pub struct OptContext {
    pub query_id: QueryId,
    pub naive_plan: Plan,
    pub catalog: Catalog,
    pub exec: ExecConfig,
    /// Stream metadata as presented to the optimizer (tests may understate
    /// limits to exercise self-correction).
    pub meta: StreamMeta,
    pub sample: Vec<StreamEvent>,
    pub summary: SampleSummary,
    pub stream_seed: u64,
    pub tau: f64,
}

impl OptContext {
    pub fn replay(&self) -> crate::datagen::VecStream {
        crate::datagen::VecStream::new(self.sample.clone(), self.meta.clone())
    }
}
