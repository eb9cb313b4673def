use serde::{Deserialize, Serialize};

use super::{Effect, SkillSpec};
use crate::adapters::AssetLibrary;
use crate::data::{validate_format, FormatId};
use crate::intent::{EntityRef, ParamValue, Params};
use crate::planner::{micro, AbstractState};
use crate::state::{OperationalContext, SceneState, SpatialPredicate};

/// Expected outcome of a call, checked against the context after it runs.
/// Real values are micro-units.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Postcondition {
    EntityCountAtLeast { category: String, count: usize },
    EntityCountAtMost { category: String, count: usize },
    EntityAbsent { entity: EntityRef },
    RelationHolds { subject: EntityRef, predicate: SpatialPredicate, object: EntityRef },
    RelationAbsent { subject: EntityRef, predicate: SpatialPredicate, object: EntityRef },
    LightingIs { intensity: Option<i64>, color_temperature: Option<i64> },
    CameraIs { id: String, fov: i64 },
    CameraAbsent { id: String },
    RobotIs { model: String },
    AssetRegistered { category: String },
    EpisodesAtLeast { task: String, count: usize },
    ExportCovers { format: FormatId, task: String },
    CodeValid { id: String },
    CheckpointFor { model: String, dataset: String },
    ReportExists { model: String, benchmark: String },
}

pub(crate) fn ref_matches(scene: &SceneState, id: &str, r: &EntityRef) -> bool {
    match &r.id {
        Some(rid) => rid == id,
        None => scene.entity(id).is_some_and(|e| e.category == r.category),
    }
}

pub(crate) fn relation_holds(scene: &SceneState, s: &EntityRef, p: SpatialPredicate, o: &EntityRef) -> bool {
    scene.relations.iter().any(|r| r.predicate == p && ref_matches(scene, &r.subject, s) && ref_matches(scene, &r.object, o))
}

/// Whether an asset category can be spawned in this scene.
pub(crate) fn asset_available(scene: &SceneState, category: &str) -> bool {
    AssetLibrary::builtin_categories().any(|c| c == category) || scene.registered_assets.iter().any(|a| a.category == category)
}

impl Postcondition {
    /// `Err` carries a human-readable reason.
    pub fn check(&self, ctx: &OperationalContext) -> Result<(), String> {
        let scene = &ctx.scene;
        let ok = |b: bool, msg: String| if b { Ok(()) } else { Err(msg) };
        match self {
            Postcondition::EntityCountAtLeast { category, count } => {
                let n = scene.entities_of(category).count();
                ok(n >= *count, format!("expected at least {count} {category} entities, found {n}"))
            }
            Postcondition::EntityCountAtMost { category, count } => {
                let n = scene.entities_of(category).count();
                ok(n <= *count, format!("expected at most {count} {category} entities, found {n}"))
            }
            Postcondition::EntityAbsent { entity } => ok(
                !scene.entities.iter().any(|e| ref_matches(scene, &e.id, entity)),
                format!("{entity} still present"),
            ),
            Postcondition::RelationHolds { subject, predicate, object } => ok(
                relation_holds(scene, subject, *predicate, object),
                format!("relation {subject} {predicate} {object} does not hold"),
            ),
            Postcondition::RelationAbsent { subject, predicate, object } => ok(
                !relation_holds(scene, subject, *predicate, object),
                format!("relation {subject} {predicate} {object} still holds"),
            ),
            Postcondition::LightingIs { intensity, color_temperature } => {
                let i = intensity.map_or(true, |v| micro(scene.lighting.intensity) == v);
                let c = color_temperature.map_or(true, |v| micro(scene.lighting.color_temperature) == v);
                ok(i && c, format!("lighting is {:?}", scene.lighting))
            }
            Postcondition::CameraIs { id, fov } => match scene.camera(id) {
                Some(c) => ok(micro(c.fov_deg) == *fov, format!("camera {id} has fov {}", c.fov_deg)),
                None => Err(format!("camera {id} missing")),
            },
            Postcondition::CameraAbsent { id } => ok(scene.camera(id).is_none(), format!("camera {id} still present")),
            Postcondition::RobotIs { model } => ok(
                scene.robot.as_ref().is_some_and(|r| &r.model == model),
                format!("robot is {:?}", scene.robot.as_ref().map(|r| &r.model)),
            ),
            Postcondition::AssetRegistered { category } => {
                ok(asset_available(scene, category), format!("no registered asset for {category}"))
            }
            Postcondition::EpisodesAtLeast { task, count } => {
                let n = ctx.data.episodes_of(task).count();
                ok(n >= *count, format!("expected at least {count} episodes of {task}, found {n}"))
            }
            Postcondition::ExportCovers { format, task } => {
                let m = ctx.data.exports.get(format).ok_or_else(|| format!("no {format} export"))?;
                let expected: Vec<&str> = ctx.data.episodes_of(task).filter(|e| e.success).map(|e| e.id.as_str()).collect();
                let mut covered: Vec<&str> = m.episode_ids.iter().map(String::as_str).collect();
                covered.sort();
                let mut expected_sorted = expected.clone();
                expected_sorted.sort();
                if covered != expected_sorted {
                    return Err(format!("{format} export covers {} of {} episodes", covered.len(), expected.len()));
                }
                let report = validate_format(m);
                ok(report.is_clean(), format!("{format} export has {} violation(s)", report.violations.len()))
            }
            Postcondition::CodeValid { id } => ok(
                ctx.model
                    .code_assets
                    .iter()
                    .any(|c| &c.id == id && c.status == crate::state::ValidationStatus::Valid),
                format!("code asset {id} not valid"),
            ),
            Postcondition::CheckpointFor { model, dataset } => ok(
                ctx.model.latest_checkpoint(model).is_some_and(|c| &c.parent_dataset == dataset),
                format!("no checkpoint of {model} trained on {dataset}"),
            ),
            Postcondition::ReportExists { model, benchmark } => ok(
                ctx.model.report(model, benchmark).is_some_and(|r| r.episode_count > 0),
                format!("no completed report for {model} on {benchmark}"),
            ),
        }
    }

    /// Field path, or other reference, the postcondition concerns.
    pub fn reference(&self) -> String {
        match self {
            Postcondition::EntityCountAtLeast { category, .. } | Postcondition::EntityCountAtMost { category, .. } => {
                format!("scene.entities[{category}]")
            }
            Postcondition::EntityAbsent { entity } => format!("scene.entities[{entity}]"),
            Postcondition::RelationHolds { subject, predicate, object }
            | Postcondition::RelationAbsent { subject, predicate, object } => {
                format!("scene.relations[{subject},{predicate},{object}]")
            }
            Postcondition::LightingIs { .. } => "scene.lighting".into(),
            Postcondition::CameraIs { id, .. } | Postcondition::CameraAbsent { id } => format!("scene.cameras[{id}]"),
            Postcondition::RobotIs { .. } => "scene.robot".into(),
            Postcondition::AssetRegistered { category } => format!("scene.registered_assets[{category}]"),
            Postcondition::EpisodesAtLeast { task, .. } => format!("data.episodes[{task}]"),
            Postcondition::ExportCovers { format, .. } => format!("data.exports[{format}]"),
            Postcondition::CodeValid { id } => format!("model.code_assets[{id}]"),
            Postcondition::CheckpointFor { model, .. } => format!("model.checkpoints[{model}]"),
            Postcondition::ReportExists { model, benchmark } => format!("model.eval_reports[{model},{benchmark}]"),
        }
    }
}

fn s<'a>(params: &'a Params, k: &str) -> &'a str {
    params.get(k).and_then(ParamValue::as_str).unwrap_or_default()
}

fn e(params: &Params, k: &str) -> EntityRef {
    params.get(k).and_then(ParamValue::as_entity).cloned().unwrap_or_else(|| EntityRef::category(""))
}

fn p(params: &Params) -> SpatialPredicate {
    SpatialPredicate::parse(s(params, "predicate")).unwrap_or(SpatialPredicate::On)
}

/// Postconditions of a call, instantiated against the state it runs from.
pub fn instantiate_postconditions(spec: &SkillSpec, params: &Params, pre: &AbstractState) -> Vec<Postcondition> {
    let mut out = Vec::new();
    for effect in &spec.effects {
        match effect {
            Effect::Identity => {}
            Effect::AddEntity => {
                let c = s(params, "category");
                out.push(Postcondition::EntityCountAtLeast { category: c.into(), count: pre.count_of(c) + 1 });
            }
            Effect::RemoveEntity => {
                let r = e(params, "entity");
                if r.id.is_some() {
                    out.push(Postcondition::EntityAbsent { entity: r });
                } else {
                    let n = pre.count_of(&r.category);
                    out.push(Postcondition::EntityCountAtMost { category: r.category, count: n.saturating_sub(1) });
                }
            }
            Effect::SetRelation => out.push(Postcondition::RelationHolds {
                subject: e(params, "subject"),
                predicate: p(params),
                object: e(params, "object"),
            }),
            Effect::ClearRelation => out.push(Postcondition::RelationAbsent {
                subject: e(params, "subject"),
                predicate: p(params),
                object: e(params, "object"),
            }),
            Effect::SetLighting => out.push(Postcondition::LightingIs {
                intensity: params.get("intensity").and_then(ParamValue::as_f64).map(micro),
                color_temperature: params.get("color_temperature").and_then(ParamValue::as_f64).map(micro),
            }),
            Effect::SetCamera => out.push(Postcondition::CameraIs {
                id: s(params, "camera").into(),
                fov: params.get("fov").and_then(ParamValue::as_f64).map(micro).unwrap_or_default(),
            }),
            Effect::RemoveCamera => out.push(Postcondition::CameraAbsent { id: s(params, "camera").into() }),
            Effect::SetRobot => out.push(Postcondition::RobotIs { model: s(params, "model").into() }),
            Effect::RegisterAsset => out.push(Postcondition::AssetRegistered { category: s(params, "category").into() }),
            Effect::AddEpisodes => {
                let t = s(params, "task");
                let before = pre.episodes.get(t).map(|st| st.count).unwrap_or(0);
                let n = params.get("count").and_then(ParamValue::as_int).unwrap_or(0).max(0) as u64;
                out.push(Postcondition::EpisodesAtLeast { task: t.into(), count: (before + n) as usize });
            }
            Effect::Export => {
                if let Ok(format) = s(params, "format").parse() {
                    out.push(Postcondition::ExportCovers { format, task: s(params, "task").into() });
                }
            }
            Effect::EditCode => out.push(Postcondition::CodeValid {
                id: format!("{}/{}", s(params, "model"), s(params, "name")),
            }),
            Effect::Train => out.push(Postcondition::CheckpointFor {
                model: s(params, "model").into(),
                dataset: s(params, "dataset").into(),
            }),
            Effect::Evaluate => out.push(Postcondition::ReportExists {
                model: s(params, "model").into(),
                benchmark: s(params, "benchmark").into(),
            }),
        }
    }
    out
}
