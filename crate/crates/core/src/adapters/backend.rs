use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::collect::{mock_collect, CollectConfig};
use super::model::{mock_evaluate, mock_train};
use super::sim::{arg_str, arg_u64, mock_sim_apply};
use super::{AdapterError, AssetLibrary, FaultInjector, FaultMode, GroundedAction, SourceDescriptor, MOCK_SIM_BACKEND};
use crate::data::{export, FormatId};
use crate::state::{CodeAsset, OperationalContext, Provenance, Relation, SpatialPredicate, ValidationStatus};

pub const MOCK_COLLECTOR_BACKEND: &str = "mock-collector";
pub const MOCK_MODEL_BACKEND: &str = "mock-model";

const SIM_CAPABILITIES: &[&str] = &[
    "clear-relation",
    "ingest-asset",
    "localize-objects",
    "recognize-objects",
    "remove-camera",
    "remove-entity",
    "set-camera",
    "set-lighting",
    "set-relation",
    "set-robot",
    "spawn-asset",
    "spawn-asset-staged",
];
const COLLECTOR_CAPABILITIES: &[&str] = &["collect-episodes", "export-format"];
const MODEL_CAPABILITIES: &[&str] = &["edit-code", "evaluate-model", "train-model"];

/// Identity, capabilities and configuration of an execution backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    /// Grounded binding ids the backend implements.
    pub capabilities: BTreeSet<String>,
    #[serde(default)]
    pub config: BTreeMap<String, Value>,
}

impl BackendDescriptor {
    pub fn new(id: &str, capabilities: &[&str]) -> Self {
        BackendDescriptor {
            id: id.to_string(),
            capabilities: capabilities.iter().map(|c| c.to_string()).collect(),
            config: BTreeMap::new(),
        }
    }
}

/// An execution backend. `apply` either returns the new context or fails
/// without having changed anything.
pub trait Backend: Send {
    fn descriptor(&self) -> &BackendDescriptor;

    fn apply(
        &mut self,
        action: &GroundedAction,
        ctx: &OperationalContext,
        assets: &mut AssetLibrary,
    ) -> Result<OperationalContext, AdapterError>;
}

/// Deterministic scene editor.
pub struct MockSim {
    descriptor: BackendDescriptor,
}

impl MockSim {
    pub fn new() -> Self {
        MockSim { descriptor: BackendDescriptor::new(MOCK_SIM_BACKEND, SIM_CAPABILITIES) }
    }
}

impl Default for MockSim {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for MockSim {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn apply(
        &mut self,
        action: &GroundedAction,
        ctx: &OperationalContext,
        assets: &mut AssetLibrary,
    ) -> Result<OperationalContext, AdapterError> {
        if action.binding == "ingest-asset" {
            let source: SourceDescriptor = action
                .args
                .get("source")
                .cloned()
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or_else(|| AdapterError::InvalidArgument { name: "source".into(), detail: "missing".into() })?;
            let record = assets.ingest(&source, &self.descriptor.id)?;
            if record.id != arg_str(action, "asset")? {
                return Err(AdapterError::SourceUnavailable(format!("source content changed: now {}", record.id)));
            }
        }
        let mut out = ctx.clone();
        out.scene = mock_sim_apply(action, &ctx.scene)?;
        Ok(out)
    }
}

/// Scripted trajectory collection and dataset export.
pub struct MockCollector {
    descriptor: BackendDescriptor,
}

impl MockCollector {
    /// Exports are written below `export_root`; `fault_rate` is the
    /// per-episode failure probability.
    pub fn new(export_root: impl Into<PathBuf>, fault_rate: f64) -> Self {
        let mut descriptor = BackendDescriptor::new(MOCK_COLLECTOR_BACKEND, COLLECTOR_CAPABILITIES);
        descriptor.config.insert("export_root".into(), json!(export_root.into().to_string_lossy()));
        descriptor.config.insert("fault_rate".into(), json!(fault_rate));
        MockCollector { descriptor }
    }
}

impl Backend for MockCollector {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn apply(
        &mut self,
        action: &GroundedAction,
        ctx: &OperationalContext,
        _assets: &mut AssetLibrary,
    ) -> Result<OperationalContext, AdapterError> {
        let mut out = ctx.clone();
        match action.binding.as_str() {
            "collect-episodes" => {
                let task = arg_str(action, "task")?;
                let seed = arg_u64(action, "seed")?;
                let config = CollectConfig {
                    fault_rate: action.args.get("fault_rate").and_then(Value::as_f64).unwrap_or(0.0),
                    joint_dim: action.args.get("joint_dim").and_then(Value::as_u64).map(|d| d as usize),
                    first_index: arg_u64(action, "first_index")?,
                };
                let episodes = mock_collect(task, arg_u64(action, "count")?, &ctx.scene, seed, &config)?;
                for e in episodes {
                    if out.data.episodes.iter().any(|x| x.id == e.id) {
                        return Err(AdapterError::InvalidArgument { name: "first_index".into(), detail: format!("{} exists", e.id) });
                    }
                    out.data.provenance.insert(
                        e.id.clone(),
                        Provenance { scene_id: ctx.scene.scene_id.clone(), scene_version: ctx.scene.version, seed: e.seed },
                    );
                    out.data.episodes.push(e);
                }
            }
            "export-format" => {
                let task = arg_str(action, "task")?;
                let format: FormatId = arg_str(action, "format")?
                    .parse()
                    .map_err(|e: crate::data::DataError| AdapterError::ExportFailed(e.to_string()))?;
                let dest = PathBuf::from(arg_str(action, "destination")?);
                let episodes: Vec<_> = ctx.data.episodes_of(task).filter(|e| e.success).cloned().collect();
                let manifest = export(&episodes, format, &dest).map_err(|e| AdapterError::ExportFailed(e.to_string()))?;
                out.data.exports.insert(format, manifest);
            }
            other => {
                return Err(AdapterError::UnsupportedCapability { backend: self.descriptor.id.clone(), binding: other.into() })
            }
        }
        Ok(out)
    }
}

/// Code editing, training and evaluation.
pub struct MockModel {
    descriptor: BackendDescriptor,
}

impl MockModel {
    pub fn new() -> Self {
        MockModel { descriptor: BackendDescriptor::new(MOCK_MODEL_BACKEND, MODEL_CAPABILITIES) }
    }
}

impl Default for MockModel {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for MockModel {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn apply(
        &mut self,
        action: &GroundedAction,
        ctx: &OperationalContext,
        assets: &mut AssetLibrary,
    ) -> Result<OperationalContext, AdapterError> {
        let mut out = ctx.clone();
        match action.binding.as_str() {
            "edit-code" => {
                let id = arg_str(action, "id")?;
                let asset = CodeAsset::new(id, arg_str(action, "model")?, arg_str(action, "content")?.to_string(), ValidationStatus::Valid);
                out.model.code_assets.retain(|c| c.id != id);
                out.model.code_assets.push(asset);
            }
            "train-model" => {
                let epochs = u32::try_from(arg_u64(action, "epochs")?)
                    .map_err(|_| AdapterError::InvalidArgument { name: "epochs".into(), detail: "too large".into() })?;
                let ckpt = mock_train(
                    ctx,
                    assets,
                    arg_str(action, "model")?,
                    arg_str(action, "dataset")?,
                    epochs,
                    arg_u64(action, "seed")?,
                )?;
                out.model.checkpoints.push(ckpt);
            }
            "evaluate-model" => {
                let report = mock_evaluate(
                    ctx,
                    assets,
                    arg_str(action, "model")?,
                    arg_str(action, "benchmark")?,
                    arg_u64(action, "episodes")?,
                    arg_u64(action, "seed")?,
                )?;
                out.model.eval_reports.retain(|r| !(r.model == report.model && r.benchmark == report.benchmark));
                out.model.eval_reports.push(report);
            }
            other => {
                return Err(AdapterError::UnsupportedCapability { backend: self.descriptor.id.clone(), binding: other.into() })
            }
        }
        Ok(out)
    }
}

/// The active backends of a session, routed by binding id, plus the
/// session's fault injector.
pub struct BackendSet {
    backends: Vec<Box<dyn Backend>>,
    faults: FaultInjector,
}

impl BackendSet {
    pub fn new(backends: Vec<Box<dyn Backend>>) -> Self {
        BackendSet { backends, faults: FaultInjector::default() }
    }

    /// The three mock backends, exporting below `export_root`.
    pub fn mock(export_root: impl Into<PathBuf>) -> Self {
        Self::new(vec![Box::new(MockSim::new()), Box::new(MockCollector::new(export_root, 0.0)), Box::new(MockModel::new())])
    }

    pub fn with_faults(mut self, faults: FaultInjector) -> Self {
        self.faults = faults;
        self
    }

    pub fn set_faults(&mut self, faults: FaultInjector) {
        self.faults = faults;
    }

    pub fn descriptors(&self) -> Vec<&BackendDescriptor> {
        self.backends.iter().map(|b| b.descriptor()).collect()
    }

    /// Backend implementing `binding`; the first registered one wins.
    pub fn route(&self, binding: &str) -> Option<&BackendDescriptor> {
        self.backends.iter().map(|b| b.descriptor()).find(|d| d.capabilities.contains(binding))
    }

    /// JSON capability manifest: backend id to its bindings and config.
    pub fn capability_manifest(&self) -> Value {
        Value::Array(self.backends.iter().map(|b| serde_json::to_value(b.descriptor()).expect("descriptor serializes")).collect())
    }

    /// Applies an action on its backend, subject to fault injection.
    pub fn apply(
        &mut self,
        action: &GroundedAction,
        ctx: &OperationalContext,
        assets: &mut AssetLibrary,
    ) -> Result<OperationalContext, AdapterError> {
        let fault = self.faults.draw(&action.binding);
        if fault == Some(FaultMode::ErrorBeforeMutation) {
            return Err(AdapterError::InjectedFault(action.binding.clone()));
        }
        let backend = self
            .backends
            .iter_mut()
            .find(|b| b.descriptor().id == action.backend)
            .ok_or_else(|| AdapterError::UnsupportedCapability { backend: action.backend.clone(), binding: action.binding.clone() })?;
        let mut out = backend.apply(action, ctx, assets)?;
        if fault == Some(FaultMode::CorruptWrite) {
            let subject = out.scene.entities.first().map(|e| e.id.clone()).unwrap_or_else(|| "ghost".into());
            out.scene.relations.push(Relation::new(subject, SpatialPredicate::On, "ghost"));
        }
        Ok(out)
    }
}
