//! The skill library: typed skill specifications with preconditions,
//! abstract effects for planning, static costs and grounded bindings.

mod effects;
mod postcondition;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::AssetLibrary;
use crate::intent::{ObjectClass, ParamValue, Params};
use crate::planner::AbstractState;
use crate::state::{OperationalContext, SpatialPredicate};

pub use effects::{apply_abstract_effect, check_abstract_preconditions, resolve_abstract_entity};
pub use postcondition::{instantiate_postconditions, Postcondition};
pub(crate) use postcondition::{asset_available, ref_matches, relation_holds};

/// Version of the declarative skill-library file format.
pub const SKILL_SCHEMA_VERSION: u32 = 1;

const BUILTIN_JSON: &str = include_str!("../../skills/builtin.json");

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum SkillError {
    #[error("skill {0} already registered")]
    DuplicateSkill(String),
    #[error("unknown skill {0}")]
    UnknownSkill(String),
    #[error("schema mismatch for {skill}: {detail}")]
    SchemaMismatch { skill: String, detail: String },
    #[error("precondition {rule} of {skill} does not hold: {detail}")]
    PreconditionFailure { skill: String, rule: String, detail: String },
    #[error("invalid skill spec {skill}: {detail}")]
    InvalidSpec { skill: String, detail: String },
    #[error("cannot load skill library: {0}")]
    Load(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    Category,
    Entity,
    Predicate,
    Intensity,
    ColorTemperature,
    Fov,
    Count,
    CameraId,
    RobotModel,
    Task,
    Format,
    Model,
    Benchmark,
    CodeName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemanticType,
    #[serde(default = "yes")]
    pub required: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    /// Attention units demanded of the user.
    pub human: f64,
    pub sys_time: f64,
    pub sys_tokens: f64,
}

impl Cost {
    pub fn new(human: f64, sys_time: f64, sys_tokens: f64) -> Self {
        Cost { human, sys_time, sys_tokens }
    }

    pub fn system(&self) -> f64 {
        self.sys_time + self.sys_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillFamily {
    ObjectRecognition,
    SpatialLocalization,
    AssetRetrieval,
    SceneEditing,
    TrajectoryGeneration,
    DatasetTransformation,
    CodeEditing,
    TrainingLaunch,
    EvaluationDispatch,
}

/// Declarative precondition. Parameter names refer to the call's bound
/// parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Precondition {
    SceneNonempty,
    AssetAvailable { param: String },
    InCatalog { param: String },
    AssetMissing { param: String },
    EntityExists { param: String },
    DistinctEntities { a: String, b: String },
    RelationExists { subject: String, predicate: String, object: String },
    KnownRobot { param: String },
    RobotPresent,
    CameraExists { param: String },
    TaskEntitiesPresent { param: String },
    EpisodesAvailable { param: String },
    KnownModel { param: String },
    TrainableModel { param: String },
    CodeValid { param: String },
    KnownBenchmark { param: String },
}

impl Precondition {
    /// Rule id reported when the precondition is violated.
    pub fn rule(&self) -> &'static str {
        match self {
            Precondition::SceneNonempty => "scene-nonempty",
            Precondition::AssetAvailable { .. } => "asset-available",
            Precondition::InCatalog { .. } => "in-catalog",
            Precondition::AssetMissing { .. } => "asset-missing",
            Precondition::EntityExists { .. } => "entity-exists",
            Precondition::DistinctEntities { .. } => "distinct-entities",
            Precondition::RelationExists { .. } => "relation-exists",
            Precondition::KnownRobot { .. } => "known-robot",
            Precondition::RobotPresent => "robot-present",
            Precondition::CameraExists { .. } => "camera-exists",
            Precondition::TaskEntitiesPresent { .. } => "task-entities-present",
            Precondition::EpisodesAvailable { .. } => "episodes-available",
            Precondition::KnownModel { .. } => "known-model",
            Precondition::TrainableModel { .. } => "trainable-model",
            Precondition::CodeValid { .. } => "code-valid",
            Precondition::KnownBenchmark { .. } => "known-benchmark",
        }
    }
}

/// Abstract transition. Each variant reads fixed parameter names,
/// listed by [`Effect::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Effect {
    Identity,
    AddEntity,
    RemoveEntity,
    SetRelation,
    ClearRelation,
    SetLighting,
    SetCamera,
    RemoveCamera,
    SetRobot,
    RegisterAsset,
    AddEpisodes,
    Export,
    EditCode,
    Train,
    Evaluate,
}

impl Effect {
    /// Parameter names the effect reads; `?` marks optional ones.
    pub fn params(self) -> &'static [&'static str] {
        match self {
            Effect::Identity => &[],
            Effect::AddEntity | Effect::RegisterAsset => &["category"],
            Effect::RemoveEntity => &["entity"],
            Effect::SetRelation | Effect::ClearRelation => &["subject", "predicate", "object"],
            Effect::SetLighting => &["?intensity", "?color_temperature"],
            Effect::SetCamera => &["camera", "fov"],
            Effect::RemoveCamera => &["camera"],
            Effect::SetRobot => &["model"],
            Effect::AddEpisodes => &["task", "count"],
            Effect::Export => &["format", "task"],
            Effect::EditCode => &["model", "name"],
            Effect::Train => &["model", "dataset", "epochs"],
            Effect::Evaluate => &["model", "benchmark", "episodes"],
        }
    }

    /// Object classes the effect may modify.
    pub fn writes(self) -> &'static [ObjectClass] {
        match self {
            Effect::Identity => &[],
            Effect::AddEntity
            | Effect::RemoveEntity
            | Effect::SetRelation
            | Effect::ClearRelation
            | Effect::SetLighting
            | Effect::SetCamera
            | Effect::RemoveCamera
            | Effect::SetRobot
            | Effect::RegisterAsset => &[ObjectClass::S],
            Effect::AddEpisodes | Effect::Export => &[ObjectClass::D],
            Effect::EditCode | Effect::Train | Effect::Evaluate => &[ObjectClass::M],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub skill_id: String,
    pub family: SkillFamily,
    pub params: Vec<ParamSpec>,
    pub reads: BTreeSet<ObjectClass>,
    pub writes: BTreeSet<ObjectClass>,
    pub preconditions: Vec<Precondition>,
    pub effects: Vec<Effect>,
    pub cost: Cost,
    pub effect_signature: String,
    /// Grounded binding id implemented by a backend.
    pub binding: String,
    #[serde(default)]
    pub description: String,
}

impl SkillSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Structural checks applied at registration.
    pub fn check(&self) -> Result<(), SkillError> {
        let invalid = |detail: String| Err(SkillError::InvalidSpec { skill: self.skill_id.clone(), detail });
        if self.skill_id.is_empty() || self.binding.is_empty() || self.effect_signature.is_empty() {
            return invalid("skill_id, binding and effect_signature must be non-empty".into());
        }
        let c = self.cost;
        if [c.human, c.sys_time, c.sys_tokens].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid(format!("cost components must be finite and non-negative: {c:?}"));
        }
        let mut names = BTreeSet::new();
        for p in &self.params {
            if !names.insert(p.name.as_str()) {
                return invalid(format!("duplicate parameter {}", p.name));
            }
        }
        for e in &self.effects {
            for w in e.writes() {
                if !self.writes.contains(w) {
                    return invalid(format!("effect {e:?} writes {w:?} outside the declared writes"));
                }
            }
            for name in e.params() {
                let (optional, name) = match name.strip_prefix('?') {
                    Some(n) => (true, n),
                    None => (false, *name),
                };
                match self.param(name) {
                    Some(p) if optional || p.required => {}
                    Some(_) => return invalid(format!("effect {e:?} needs required parameter {name}")),
                    None if optional => {}
                    None => return invalid(format!("effect {e:?} reads undeclared parameter {name}")),
                }
            }
        }
        Ok(())
    }

    /// Schema check of bound parameters.
    pub fn check_params(&self, params: &Params) -> Result<(), SkillError> {
        let mismatch = |detail: String| Err(SkillError::SchemaMismatch { skill: self.skill_id.clone(), detail });
        for name in params.keys() {
            if self.param(name).is_none() {
                return mismatch(format!("unknown parameter {name}"));
            }
        }
        for p in &self.params {
            match params.get(&p.name) {
                None if p.required => return mismatch(format!("missing required parameter {}", p.name)),
                None => {}
                Some(v) => {
                    if let Err(detail) = check_type(p.ty, v) {
                        return mismatch(format!("parameter {}: {detail}", p.name));
                    }
                }
            }
        }
        Ok(())
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

fn check_type(ty: SemanticType, v: &ParamValue) -> Result<(), String> {
    let ident = |v: &ParamValue| match v.as_str() {
        Some(s) if is_ident(s) => Ok(()),
        _ => Err(format!("expected identifier, found {v}")),
    };
    match ty {
        SemanticType::Category
        | SemanticType::CameraId
        | SemanticType::RobotModel
        | SemanticType::Task
        | SemanticType::Model
        | SemanticType::Benchmark
        | SemanticType::CodeName => ident(v),
        SemanticType::Entity => match v.as_entity() {
            Some(e) if is_ident(&e.category) => Ok(()),
            _ => Err(format!("expected entity reference, found {v}")),
        },
        SemanticType::Predicate => match v.as_str().and_then(SpatialPredicate::parse) {
            Some(_) => Ok(()),
            None => Err(format!("expected spatial predicate, found {v}")),
        },
        SemanticType::Format => match v.as_str().map(str::parse::<crate::data::FormatId>) {
            Some(Ok(_)) => Ok(()),
            _ => Err(format!("unsupported format {v}")),
        },
        SemanticType::Intensity => match v.as_f64() {
            Some(x) if (0.0..=1.0).contains(&x) => Ok(()),
            _ => Err(format!("expected intensity in [0, 1], found {v}")),
        },
        SemanticType::ColorTemperature => match v.as_f64() {
            Some(x) if x > 0.0 && x.is_finite() => Ok(()),
            _ => Err(format!("expected positive color temperature, found {v}")),
        },
        SemanticType::Fov => match v.as_f64() {
            Some(x) if x > 0.0 && x < 180.0 => Ok(()),
            _ => Err(format!("expected field of view in (0, 180), found {v}")),
        },
        SemanticType::Count => match v.as_int() {
            Some(n) if n > 0 => Ok(()),
            _ => Err(format!("expected positive integer, found {v}")),
        },
    }
}

/// A bound invocation of a skill.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SkillCall {
    pub skill_id: String,
    pub params: Params,
    #[serde(default)]
    pub postconditions: Vec<Postcondition>,
}

impl SkillCall {
    pub fn new(skill_id: impl Into<String>, params: Params) -> Self {
        SkillCall { skill_id: skill_id.into(), params, postconditions: Vec::new() }
    }

    /// Identity of the call for exclusion and tie-breaking: skill and
    /// parameters, ignoring postconditions.
    pub fn key(&self) -> (&str, &Params) {
        (&self.skill_id, &self.params)
    }

    pub fn same_call(&self, other: &SkillCall) -> bool {
        self.key() == other.key()
    }

    pub fn label(&self) -> String {
        let args: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.skill_id, args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreconditionViolation {
    pub rule: String,
    pub detail: String,
}

/// Immutable-after-start collection of skill specs, indexed by id and by
/// effect signature.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillLibrary {
    skills: BTreeMap<String, SkillSpec>,
}

#[derive(Serialize, Deserialize)]
struct LibraryFile {
    schema_version: u32,
    skills: Vec<SkillSpec>,
}

impl SkillLibrary {
    pub fn new() -> Self {
        SkillLibrary::default()
    }

    /// The builtin library covering the nine skill families.
    pub fn builtin() -> Self {
        SkillLibrary::from_json(BUILTIN_JSON).expect("builtin skill library is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SkillError> {
        let file: LibraryFile = serde_json::from_str(text).map_err(|e| SkillError::Load(e.to_string()))?;
        if file.schema_version != SKILL_SCHEMA_VERSION {
            return Err(SkillError::Load(format!(
                "unsupported schema_version {} (expected {SKILL_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let mut lib = SkillLibrary::new();
        for spec in file.skills {
            lib = register_skill(lib, spec)?;
        }
        Ok(lib)
    }

    pub fn to_json(&self) -> String {
        let file = LibraryFile { schema_version: SKILL_SCHEMA_VERSION, skills: self.skills.values().cloned().collect() };
        serde_json::to_string_pretty(&file).expect("library serializes")
    }

    pub fn get(&self, id: &str) -> Option<&SkillSpec> {
        self.skills.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&SkillSpec, SkillError> {
        self.get(id).ok_or_else(|| SkillError::UnknownSkill(id.to_string()))
    }

    /// Skills sharing an effect signature, ordered by id.
    pub fn by_signature<'a>(&'a self, signature: &'a str) -> impl Iterator<Item = &'a SkillSpec> + 'a {
        self.skills.values().filter(move |s| s.effect_signature == signature)
    }

    /// The skill after `id` in id order among those sharing its signature.
    pub fn next_substitute(&self, id: &str) -> Option<&SkillSpec> {
        let spec = self.get(id)?;
        self.by_signature(&spec.effect_signature).find(|s| s.skill_id.as_str() > id)
    }

    pub fn skills(&self) -> impl Iterator<Item = &SkillSpec> {
        self.skills.values()
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn families(&self) -> BTreeSet<SkillFamily> {
        self.skills.values().map(|s| s.family).collect()
    }

    /// Keeps only the listed skills.
    pub fn restricted_to(&self, ids: &[&str]) -> SkillLibrary {
        SkillLibrary { skills: self.skills.iter().filter(|(k, _)| ids.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect() }
    }
}

/// Adds a skill. Skills sharing a signature must declare identical
/// parameter schemas so either may substitute for the other.
pub fn register_skill(mut lib: SkillLibrary, spec: SkillSpec) -> Result<SkillLibrary, SkillError> {
    if lib.skills.contains_key(&spec.skill_id) {
        return Err(SkillError::DuplicateSkill(spec.skill_id));
    }
    spec.check()?;
    if let Some(peer) = lib.by_signature(&spec.effect_signature).next() {
        if peer.params != spec.params {
            return Err(SkillError::InvalidSpec {
                skill: spec.skill_id.clone(),
                detail: format!(
                    "signature {} is shared with {} but the parameter schemas differ",
                    spec.effect_signature, peer.skill_id
                ),
            });
        }
    }
    lib.skills.insert(spec.skill_id.clone(), spec);
    Ok(lib)
}

/// Violated preconditions of a call against a concrete context. The asset
/// library supplies the static facts (available assets, robots,
/// benchmarks) that preconditions refer to.
pub fn check_preconditions(
    spec: &SkillSpec,
    params: &Params,
    ctx: &OperationalContext,
    assets: &AssetLibrary,
) -> Result<Vec<PreconditionViolation>, SkillError> {
    spec.check_params(params)?;
    let s = AbstractState::from_context(ctx, assets);
    Ok(check_abstract_preconditions(spec, params, &s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_library_loads_and_covers_families() {
        let lib = SkillLibrary::builtin();
        assert_eq!(lib.families().len(), 9);
        let again = SkillLibrary::from_json(&lib.to_json()).unwrap();
        assert_eq!(again, lib);
    }

    #[test]
    fn substitute_follows_id_order() {
        let lib = SkillLibrary::builtin();
        assert_eq!(lib.next_substitute("add_entity").unwrap().skill_id, "add_entity_staged");
        assert!(lib.next_substitute("add_entity_staged").is_none());
    }

    #[test]
    fn rejects_unknown_schema_version() {
        let err = SkillLibrary::from_json(r#"{"schema_version": 9, "skills": []}"#).unwrap_err();
        assert!(matches!(err, SkillError::Load(_)));
    }
}
