//! Platform adaptation: the asset library, skill-call binding and the
//! deterministic mock backends for simulation, collection and models.

pub mod assets;
mod backend;
mod bind;
mod collect;
mod fault;
mod model;
pub mod perception;
mod sim;
mod tasks;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assets::{
    normalize, AssetLibrary, AssetOrigin, AssetRecord, NormalizedDescriptor, RawAssetDescriptor, RawExtent,
    SourceDescriptor, MOCK_SIM_BACKEND,
};
pub use backend::{
    Backend, BackendDescriptor, BackendSet, MockCollector, MockModel, MockSim, MOCK_COLLECTOR_BACKEND,
    MOCK_MODEL_BACKEND,
};
pub use bind::{bind, resolve_entity, GroundedAction};
pub use collect::{mock_collect, CollectConfig, EPISODE_LENGTH, GOAL_TOLERANCE, SEGMENT_STEPS};
pub use fault::{FaultInjector, FaultMode};
pub use model::{mock_evaluate, mock_train, train_metric, train_metric_bound, EVAL_UNIT_COST, TRAIN_UNIT_COST};
pub use sim::{mock_sim_apply, placement, NEAR_OFFSET, SIDE_OFFSET};
pub use tasks::TaskSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum AdapterError {
    #[error("backend {backend} does not implement {binding}")]
    UnsupportedCapability { backend: String, binding: String },
    #[error("no asset of category {0} is registered on the backend")]
    UnregisteredAsset(String),
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("normalization failure: {0}")]
    NormalizationFailure(String),
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("ambiguous entity reference {0}")]
    AmbiguousEntity(String),
    #[error("unknown camera {0}")]
    UnknownCamera(String),
    #[error("unknown robot model {0}")]
    UnknownRobot(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {task} is missing entities: {missing:?}")]
    MissingTaskEntities { task: String, missing: Vec<String> },
    #[error("unknown benchmark {0}")]
    UnknownBenchmark(String),
    #[error("missing dataset {0}")]
    MissingDataset(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("invalid argument {name}: {detail}")]
    InvalidArgument { name: String, detail: String },
    #[error("backend fault injected on {0}")]
    InjectedFault(String),
    #[error("export failed: {0}")]
    ExportFailed(String),
}

impl AdapterError {
    /// Stable machine-readable code used in verdict messages.
    pub fn code(&self) -> &'static str {
        match self {
            AdapterError::UnsupportedCapability { .. } => "unsupported-capability",
            AdapterError::UnregisteredAsset(_) => "unregistered-asset",
            AdapterError::SourceUnavailable(_) => "source-unavailable",
            AdapterError::NormalizationFailure(_) => "normalization-failure",
            AdapterError::InvalidPlacement(_) => "invalid-placement",
            AdapterError::UnknownEntity(_) => "unknown-entity",
            AdapterError::AmbiguousEntity(_) => "ambiguous-entity",
            AdapterError::UnknownCamera(_) => "unknown-camera",
            AdapterError::UnknownRobot(_) => "unknown-robot",
            AdapterError::UnknownTask(_) => "unknown-task",
            AdapterError::MissingTaskEntities { .. } => "missing-task-entities",
            AdapterError::UnknownBenchmark(_) => "unknown-benchmark",
            AdapterError::MissingDataset(_) => "missing-dataset",
            AdapterError::UnknownModel(_) => "unknown-model",
            AdapterError::InvalidArgument { .. } => "invalid-argument",
            AdapterError::InjectedFault(_) => "injected-fault",
            AdapterError::ExportFailed(_) => "export-failed",
        }
    }
}
