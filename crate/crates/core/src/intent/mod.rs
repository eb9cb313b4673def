//! Intent understanding: turns a user turn into a grounded
//! [`IntentRepresentation`] whose [`GoalSpec`] describes the target outcome.

mod dsl;
mod goal;
mod ground;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::AssetLibrary;
use crate::data::FormatId;
use crate::state::{OperationalContext, SnapshotId, SpatialPredicate};

pub use dsl::{parse_command, GRAMMAR_HINT};
pub use goal::goal_from_intent;
pub use ground::ground_references;

pub type Num = OrderedFloat<f64>;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum IntentError {
    #[error("unparsable intent: {message}")]
    UnparsableIntent { message: String, hint: String },
    #[error("ambiguous reference {mention:?}: candidates {candidates:?}")]
    AmbiguousReference { mention: String, candidates: Vec<String> },
    #[error("unknown reference {mention:?}: {reason}")]
    UnknownReference { mention: String, reason: String },
    #[error("inconsistent goal: {0}")]
    InconsistentGoal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    S,
    D,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentClass {
    CreateScene,
    EditScene,
    CollectTrajectories,
    TransformData,
    EditModelCode,
    TrainModel,
    EvaluateModel,
    IngestAsset,
}

impl IntentClass {
    pub fn targets(self) -> BTreeSet<ObjectClass> {
        let t: &[ObjectClass] = match self {
            IntentClass::CreateScene | IntentClass::EditScene | IntentClass::IngestAsset => &[ObjectClass::S],
            IntentClass::CollectTrajectories | IntentClass::TransformData => &[ObjectClass::D],
            IntentClass::EditModelCode | IntentClass::TrainModel | IntentClass::EvaluateModel => &[ObjectClass::M],
        };
        t.iter().copied().collect()
    }
}

/// Reference to a scene entity. `id: None` means "any entity of this
/// category" (used before the entity exists).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityRef {
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl EntityRef {
    pub fn category(category: impl Into<String>) -> Self {
        EntityRef { category: category.into(), id: None }
    }

    pub fn id(category: impl Into<String>, id: impl Into<String>) -> Self {
        EntityRef { category: category.into(), id: Some(id.into()) }
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "{id}"),
            None => write!(f, "{}", self.category),
        }
    }
}

/// Executable reference a mention resolves to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum ExecRef {
    Entity(String),
    Asset(String),
    CatalogAsset(String),
    Dataset(String),
    Checkpoint(String),
    Model(String),
    Benchmark(String),
    Task(String),
    Camera(String),
    Robot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamValue {
    Str(String),
    Int(i64),
    Num(Num),
    Bool(bool),
    Entity(EntityRef),
    List(Vec<ParamValue>),
}

impl ParamValue {
    pub fn num(v: f64) -> Self {
        ParamValue::Num(OrderedFloat(v))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Num(n) => Some(n.0),
            ParamValue::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_entity(&self) -> Option<&EntityRef> {
        match self {
            ParamValue::Entity(e) => Some(e),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[ParamValue]> {
        match self {
            ParamValue::List(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Str(s) => write!(f, "{s}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Num(n) => write!(f, "{}", n.0),
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Entity(e) => write!(f, "{e}"),
            ParamValue::List(items) => {
                let parts: Vec<String> = items.iter().map(|i| i.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

/// Decidable predicate over a scene.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenePredicate {
    EntityExists { entity: EntityRef },
    EntityAbsent { entity: EntityRef },
    RelationHolds { subject: EntityRef, predicate: SpatialPredicate, object: EntityRef },
    RelationAbsent { subject: EntityRef, predicate: SpatialPredicate, object: EntityRef },
    RobotIs { model: String },
    LightingInRange { min: Num, max: Num },
    ColorTemperatureInRange { min: Num, max: Num },
    CameraPresent { id: String, fov: Option<Num> },
    CameraAbsent { id: String },
    CameraCount { min: u32, max: u32 },
    AssetAvailable { category: String },
}

impl ScenePredicate {
    /// The predicate this one contradicts, if any.
    pub fn negation(&self) -> Option<ScenePredicate> {
        Some(match self {
            ScenePredicate::EntityExists { entity } => ScenePredicate::EntityAbsent { entity: entity.clone() },
            ScenePredicate::EntityAbsent { entity } => ScenePredicate::EntityExists { entity: entity.clone() },
            ScenePredicate::RelationHolds { subject, predicate, object } => ScenePredicate::RelationAbsent {
                subject: subject.clone(),
                predicate: *predicate,
                object: object.clone(),
            },
            ScenePredicate::RelationAbsent { subject, predicate, object } => ScenePredicate::RelationHolds {
                subject: subject.clone(),
                predicate: *predicate,
                object: object.clone(),
            },
            ScenePredicate::CameraAbsent { id } => ScenePredicate::CameraPresent { id: id.clone(), fov: None },
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataGoals {
    pub task: String,
    pub min_episodes: u64,
    pub formats: BTreeSet<FormatId>,
    /// Episode-length dispersion at or below this counts as stable.
    pub stability_threshold: Option<Num>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReportPair {
    pub model: String,
    pub benchmark: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingGoal {
    pub model: String,
    pub dataset: String,
    /// Target loss; lower is better.
    pub target_metric: Num,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelGoals {
    pub code_assets: BTreeSet<String>,
    pub reports: BTreeSet<ReportPair>,
    pub training: Option<TrainingGoal>,
    pub resource_budget: Option<Num>,
    /// Resource units already consumed when the goal was set; only usage
    /// beyond this counts against the budget.
    #[serde(default)]
    pub resource_baseline: Num,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoalSpec {
    pub scene_goals: BTreeSet<ScenePredicate>,
    /// Scene field paths that must keep their baseline value.
    pub preserve_scope: BTreeSet<String>,
    /// Scene field paths the edit may change; disjoint from `preserve_scope`.
    pub mutable_scope: BTreeSet<String>,
    pub data_goals: Option<DataGoals>,
    pub model_goals: Option<ModelGoals>,
}

impl GoalSpec {
    pub fn is_empty(&self) -> bool {
        self.scene_goals.is_empty()
            && self.preserve_scope.is_empty()
            && self.data_goals.is_none()
            && self.model_goals.is_none()
    }
}

/// Approximate object observed in an input image, standing in for pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedObject {
    pub category: String,
    pub position: [f64; 3],
    /// Explicit relations to other observed objects, by index.
    #[serde(default)]
    pub relations: Vec<(SpatialPredicate, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationDescriptor {
    pub objects: Vec<ObservedObject>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UserTurn {
    pub text: String,
    #[serde(default)]
    pub observation: Option<ObservationDescriptor>,
    #[serde(default)]
    pub attachments: Vec<String>,
}

impl UserTurn {
    pub fn text(text: impl Into<String>) -> Self {
        UserTurn { text: text.into(), observation: None, attachments: Vec::new() }
    }

    pub fn is_well_formed(&self) -> bool {
        !self.text.trim().is_empty() || self.observation.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEntry {
    pub turn: UserTurn,
    pub response: String,
    pub snapshot: SnapshotId,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DialogueContext {
    pub entries: Vec<DialogueEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentRepresentation {
    pub intent_class: IntentClass,
    pub grounded_refs: BTreeMap<String, ExecRef>,
    pub parameters: Params,
    pub goal: GoalSpec,
    pub targets: BTreeSet<ObjectClass>,
}

impl IntentRepresentation {
    pub fn new(intent_class: IntentClass) -> Self {
        IntentRepresentation {
            intent_class,
            grounded_refs: BTreeMap::new(),
            parameters: Params::new(),
            goal: GoalSpec::default(),
            targets: intent_class.targets(),
        }
    }

    pub fn param(&self, key: &str) -> Option<&ParamValue> {
        self.parameters.get(key)
    }
}

/// Fallback for turns the DSL cannot parse. Returns an ungrounded intent.
pub trait IntentBackend: Send + Sync {
    fn infer(
        &self,
        turn: &UserTurn,
        dialog: &DialogueContext,
        ctx: &OperationalContext,
    ) -> Option<IntentRepresentation>;
}

/// Default backend: accepts nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct RejectingBackend;

impl IntentBackend for RejectingBackend {
    fn infer(&self, _: &UserTurn, _: &DialogueContext, _: &OperationalContext) -> Option<IntentRepresentation> {
        None
    }
}

/// Parses, grounds and derives the goal of a user turn.
pub fn parse_intent(
    turn: &UserTurn,
    dialog: &DialogueContext,
    ctx: &OperationalContext,
    assets: &AssetLibrary,
    backend: &dyn IntentBackend,
) -> Result<IntentRepresentation, IntentError> {
    if !turn.is_well_formed() {
        return Err(IntentError::UnparsableIntent { message: "empty turn".into(), hint: GRAMMAR_HINT.into() });
    }
    let raw = match parse_command(&turn.text, turn.observation.as_ref()) {
        Ok(intent) => intent,
        Err(message) => match backend.infer(turn, dialog, ctx) {
            Some(intent) => intent,
            None => return Err(IntentError::UnparsableIntent { message, hint: GRAMMAR_HINT.into() }),
        },
    };
    let grounded = ground_references(raw, ctx, assets)?;
    let goal = goal_from_intent(&grounded, ctx)?;
    Ok(IntentRepresentation { goal, ..grounded })
}
