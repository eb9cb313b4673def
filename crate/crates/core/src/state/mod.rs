//! Operational context: the scene, data and model states that every
//! workflow reads and writes, plus canonical serialization and the
//! content-addressed snapshot store used for rollback.

mod canonical;
mod snapshot;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Episode, ExportManifest, FormatId};

pub use canonical::{canonical_serialize, deserialize_canonical, hash_bytes, STATE_SCHEMA_VERSION};
pub use snapshot::{snapshot, restore, SnapshotStore};
pub use validate::{validate_context, Violation};

/// Tolerance accepted when normalizing an incoming quaternion.
pub const QUAT_INGEST_TOLERANCE: f64 = 1e-3;
/// Tolerance enforced on stored quaternions.
pub const QUAT_STORAGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("invalid context: {} violation(s), first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidContext(Vec<Violation>),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(SnapshotId),
    #[error("corrupt snapshot {id}: {reason}")]
    CorruptSnapshot { id: SnapshotId, reason: String },
    #[error("quaternion norm {norm} too far from unit length")]
    NonUnitQuaternion { norm: f64 },
    #[error("decode error: {0}")]
    Decode(String),
}

/// Position in meters plus orientation as a unit quaternion `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    pub const IDENTITY: Pose = Pose { position: [0.0; 3], orientation: [1.0, 0.0, 0.0, 0.0] };

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Pose { position: [x, y, z], orientation: [1.0, 0.0, 0.0, 0.0] }
    }

    /// Builds a pose from raw input, normalizing the quaternion when it is
    /// within [`QUAT_INGEST_TOLERANCE`] of unit norm and rejecting it otherwise.
    pub fn ingest(position: [f64; 3], orientation: [f64; 4]) -> Result<Self, StateError> {
        let norm = quat_norm(&orientation);
        if !norm.is_finite() || (norm - 1.0).abs() > QUAT_INGEST_TOLERANCE {
            return Err(StateError::NonUnitQuaternion { norm });
        }
        let q = orientation.map(|c| c / norm);
        Ok(Pose { position, orientation: q })
    }
}

pub(crate) fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub asset_ref: String,
    pub pose: Pose,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialPredicate {
    On,
    In,
    LeftOf,
    RightOf,
    Near,
}

impl SpatialPredicate {
    pub const ALL: [SpatialPredicate; 5] = [
        SpatialPredicate::On,
        SpatialPredicate::In,
        SpatialPredicate::LeftOf,
        SpatialPredicate::RightOf,
        SpatialPredicate::Near,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpatialPredicate::On => "on",
            SpatialPredicate::In => "in",
            SpatialPredicate::LeftOf => "left_of",
            SpatialPredicate::RightOf => "right_of",
            SpatialPredicate::Near => "near",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for SpatialPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub predicate: SpatialPredicate,
    pub object: String,
}

impl Relation {
    pub fn new(subject: impl Into<String>, predicate: SpatialPredicate, object: impl Into<String>) -> Self {
        Relation { subject: subject.into(), predicate, object: object.into() }
    }

    /// Field path of this relation inside the scene.
    pub fn path(&self) -> String {
        format!("relations/{}/{}/{}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub model: String,
    pub base_pose: Pose,
    pub joint_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    /// Normalized intensity in `[0, 1]`.
    pub intensity: f64,
    /// Color temperature in Kelvin.
    pub color_temperature: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting { intensity: 0.8, color_temperature: 5500.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: String,
    pub pose: Pose,
    pub fov_deg: f64,
}

/// An asset registered into this scene's simulator beyond the builtin library.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegisteredAsset {
    pub asset_id: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub scene_id: String,
    pub version: u64,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub robot: Option<Robot>,
    pub lighting: Lighting,
    pub cameras: Vec<Camera>,
    #[serde(default)]
    pub registered_assets: Vec<RegisteredAsset>,
}

impl SceneState {
    pub fn empty(scene_id: impl Into<String>) -> Self {
        SceneState {
            scene_id: scene_id.into(),
            version: 0,
            entities: Vec::new(),
            relations: Vec::new(),
            robot: None,
            lighting: Lighting::default(),
            cameras: Vec::new(),
            registered_assets: Vec::new(),
        }
    }

    /// Marks a mutation. Every write bumps the version, even when the
    /// written value equals the previous one.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn entity_mut(&mut self, id: &str) -> Option<&mut Entity> {
        self.entities.iter_mut().find(|e| e.id == id)
    }

    pub fn entities_of<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a Entity> + 'a {
        self.entities.iter().filter(move |e| e.category == category)
    }

    pub fn camera(&self, id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Every addressable field path of the scene, in canonical order.
    ///
    /// Paths are `entities/<id>`, `relations/<s>/<p>/<o>`, `robot`,
    /// `lighting` and `cameras/<id>`.
    pub fn field_paths(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        out.extend(self.entities.iter().map(|e| format!("entities/{}", e.id)));
        out.extend(self.relations.iter().map(Relation::path));
        out.push("robot".to_string());
        out.push("lighting".to_string());
        out.extend(self.cameras.iter().map(|c| format!("cameras/{}", c.id)));
        out.sort();
        out.dedup();
        out
    }

    /// Canonical JSON value at a field path, `None` when the path is absent.
    pub fn path_value(&self, path: &str) -> Option<serde_json::Value> {
        if path == "robot" {
            return Some(serde_json::to_value(&self.robot).expect("robot serializes"));
        }
        if path == "lighting" {
            return Some(serde_json::to_value(self.lighting).expect("lighting serializes"));
        }
        if let Some(id) = path.strip_prefix("entities/") {
            return self.entity(id).map(|e| serde_json::to_value(e).expect("entity serializes"));
        }
        if let Some(id) = path.strip_prefix("cameras/") {
            return self.camera(id).map(|c| serde_json::to_value(c).expect("camera serializes"));
        }
        if path.starts_with("relations/") {
            return self
                .relations
                .iter()
                .find(|r| r.path() == path)
                .map(|r| serde_json::to_value(r).expect("relation serializes"));
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_id: String,
    pub scene_version: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataState {
    pub episodes: Vec<Episode>,
    pub exports: BTreeMap<FormatId, ExportManifest>,
    pub provenance: BTreeMap<String, Provenance>,
}

impl DataState {
    pub fn episodes_of<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a Episode> + 'a {
        self.episodes.iter().filter(move |e| e.task_id == task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Unvalidated,
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeAsset {
    pub id: String,
    pub model: String,
    pub content: String,
    pub content_hash: String,
    pub status: ValidationStatus,
}

impl CodeAsset {
    pub fn new(id: impl Into<String>, model: impl Into<String>, content: String, status: ValidationStatus) -> Self {
        let content_hash = hash_bytes(content.as_bytes());
        CodeAsset { id: id.into(), model: model.into(), content, content_hash, status }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub id: String,
    pub model: String,
    /// Dataset (task id) the checkpoint was trained on.
    pub parent_dataset: String,
    pub epochs: u32,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub benchmark: String,
    pub success_rate: f64,
    pub episode_count: u64,
    pub resource_units: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelState {
    pub code_assets: Vec<CodeAsset>,
    pub checkpoints: Vec<Checkpoint>,
    pub eval_reports: Vec<EvalReport>,
}

impl ModelState {
    pub fn report(&self, model: &str, benchmark: &str) -> Option<&EvalReport> {
        self.eval_reports.iter().find(|r| r.model == model && r.benchmark == benchmark)
    }

    pub fn latest_checkpoint(&self, model: &str) -> Option<&Checkpoint> {
        self.checkpoints.iter().filter(|c| c.model == model).max_by(|a, b| a.id.cmp(&b.id))
    }

    /// Resource units consumed by evaluation and training so far.
    pub fn resource_units(&self) -> f64 {
        let eval = self.eval_reports.iter().map(|r| r.resource_units);
        let train = self.checkpoints.iter().filter_map(|c| c.metrics.get("resource_units").copied());
        // fold from +0.0; an empty f64 sum is -0.0
        eval.chain(train).fold(0.0, |a, b| a + b)
    }
}

/// The `(scene, data, model)` triple every workflow operates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalContext {
    pub scene: SceneState,
    pub data: DataState,
    pub model: ModelState,
}

impl OperationalContext {
    pub fn empty(scene_id: impl Into<String>) -> Self {
        OperationalContext {
            scene: SceneState::empty(scene_id),
            data: DataState::default(),
            model: ModelState::default(),
        }
    }

    /// Sorts every list by id and normalizes signed zeros so that two
    /// logically equal contexts serialize identically.
    pub fn canonicalize(&mut self) {
        canonical::canonicalize(self)
    }

    /// Content hash of the canonical serialization.
    pub fn content_hash(&self) -> Result<SnapshotId, StateError> {
        canonical_serialize(self).map(|b| SnapshotId(hash_bytes(&b)))
    }
}

/// Hex SHA-256 of a context's canonical serialization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnapshotId(pub String);

impl SnapshotId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SnapshotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
