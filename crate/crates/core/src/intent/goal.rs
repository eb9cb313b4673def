use std::collections::BTreeSet;

use ordered_float::OrderedFloat;

use super::{
    DataGoals, EntityRef, GoalSpec, IntentClass, IntentError, IntentRepresentation, ModelGoals, ParamValue,
    ReportPair, ScenePredicate, TrainingGoal,
};
use crate::data::FormatId;
use crate::state::{OperationalContext, SceneState, SpatialPredicate};

/// Training target used when a TRAIN command gives none.
pub const DEFAULT_TRAIN_TARGET: f64 = 0.1;

fn list<'a>(intent: &'a IntentRepresentation, key: &str) -> &'a [ParamValue] {
    intent.param(key).and_then(ParamValue::as_list).unwrap_or_default()
}

fn relation_triple(v: &ParamValue) -> Option<(EntityRef, SpatialPredicate, EntityRef)> {
    let items = v.as_list()?;
    let [s, p, o] = items else { return None };
    Some((s.as_entity()?.clone(), SpatialPredicate::parse(p.as_str()?)?, o.as_entity()?.clone()))
}

fn formats(intent: &IntentRepresentation) -> BTreeSet<FormatId> {
    list(intent, "formats").iter().filter_map(|f| f.as_str()?.parse().ok()).collect()
}

fn scene_goals(intent: &IntentRepresentation) -> BTreeSet<ScenePredicate> {
    let mut goals = BTreeSet::new();
    for e in list(intent, "entities").iter().filter_map(ParamValue::as_entity) {
        goals.insert(ScenePredicate::EntityExists { entity: e.clone() });
    }
    for (subject, predicate, object) in list(intent, "relations").iter().filter_map(relation_triple) {
        goals.insert(ScenePredicate::RelationHolds { subject, predicate, object });
    }
    for (subject, predicate, object) in list(intent, "forbidden_relations").iter().filter_map(relation_triple) {
        goals.insert(ScenePredicate::RelationAbsent { subject, predicate, object });
    }
    for e in list(intent, "remove_entities").iter().filter_map(ParamValue::as_entity) {
        goals.insert(ScenePredicate::EntityAbsent { entity: e.clone() });
    }
    for c in list(intent, "remove_cameras").iter().filter_map(ParamValue::as_str) {
        goals.insert(ScenePredicate::CameraAbsent { id: c.to_string() });
    }
    if let Some(model) = intent.param("robot").and_then(ParamValue::as_str) {
        goals.insert(ScenePredicate::RobotIs { model: model.to_string() });
    }
    if let Some(v) = intent.param("lighting.intensity").and_then(ParamValue::as_f64) {
        goals.insert(ScenePredicate::LightingInRange { min: OrderedFloat(v), max: OrderedFloat(v) });
    }
    if let Some(v) = intent.param("lighting.color_temperature").and_then(ParamValue::as_f64) {
        goals.insert(ScenePredicate::ColorTemperatureInRange { min: OrderedFloat(v), max: OrderedFloat(v) });
    }
    if let Some(n) = intent.param("camera_count").and_then(ParamValue::as_int) {
        goals.insert(ScenePredicate::CameraCount { min: n as u32, max: n as u32 });
    }
    for (key, v) in &intent.parameters {
        if let Some(id) = key.strip_prefix("camera.").and_then(|k| k.strip_suffix(".fov")) {
            goals.insert(ScenePredicate::CameraPresent { id: id.to_string(), fov: v.as_f64().map(OrderedFloat) });
        }
    }
    goals
}

fn check_consistency(goals: &BTreeSet<ScenePredicate>) -> Result<(), IntentError> {
    for g in goals {
        if let Some(neg) = g.negation() {
            if goals.contains(&neg) {
                return Err(IntentError::InconsistentGoal(format!("{g:?} contradicts {neg:?}")));
            }
        }
        if let ScenePredicate::RelationHolds { subject, object, .. } = g {
            for e in [subject, object] {
                if goals.contains(&ScenePredicate::EntityAbsent { entity: e.clone() }) {
                    return Err(IntentError::InconsistentGoal(format!("relation on {e} requires it to exist")));
                }
            }
        }
        if let ScenePredicate::CameraAbsent { id } = g {
            if goals.iter().any(|o| matches!(o, ScenePredicate::CameraPresent { id: p, .. } if p == id)) {
                return Err(IntentError::InconsistentGoal(format!("camera {id} both required and removed")));
            }
        }
    }
    Ok(())
}

/// Relations touching `id` as subject (these move when the subject is re-posed).
fn subject_relation_paths(scene: &SceneState, id: &str) -> Vec<String> {
    scene.relations.iter().filter(|r| r.subject == id).map(|r| r.path()).collect()
}

/// Baseline field paths an edit intent will write.
fn mutated_paths(intent: &IntentRepresentation, scene: &SceneState) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if intent.param("lighting.intensity").is_some() || intent.param("lighting.color_temperature").is_some() {
        out.insert("lighting".to_string());
    }
    if intent.param("robot").is_some() {
        out.insert("robot".to_string());
    }
    if intent.param("camera_count").is_some() {
        out.extend(scene.cameras.iter().map(|c| format!("cameras/{}", c.id)));
    }
    for key in intent.parameters.keys() {
        if let Some(id) = key.strip_prefix("camera.").and_then(|k| k.strip_suffix(".fov")) {
            out.insert(format!("cameras/{id}"));
        }
    }
    for c in list(intent, "remove_cameras").iter().filter_map(ParamValue::as_str) {
        out.insert(format!("cameras/{c}"));
    }
    for e in list(intent, "remove_entities").iter().filter_map(ParamValue::as_entity) {
        if let Some(id) = &e.id {
            out.insert(format!("entities/{id}"));
            out.extend(scene.relations.iter().filter(|r| &r.subject == id || &r.object == id).map(|r| r.path()));
        }
    }
    for (s, p, o) in list(intent, "relations").iter().filter_map(relation_triple) {
        if let Some(id) = &s.id {
            out.insert(format!("entities/{id}"));
            out.extend(subject_relation_paths(scene, id));
        }
        if let (Some(si), Some(oi)) = (&s.id, &o.id) {
            out.insert(format!("relations/{si}/{p}/{oi}"));
        }
    }
    for (s, p, o) in list(intent, "forbidden_relations").iter().filter_map(relation_triple) {
        if let (Some(si), Some(oi)) = (&s.id, &o.id) {
            out.insert(format!("relations/{si}/{p}/{oi}"));
        }
    }
    let all: BTreeSet<String> = scene.field_paths().into_iter().collect();
    out.retain(|p| all.contains(p));
    out
}

fn scope_item_paths(item: &ParamValue, scene: &SceneState) -> BTreeSet<String> {
    let all = scene.field_paths();
    let mut out = BTreeSet::new();
    match item {
        ParamValue::Str(s) => match s.as_str() {
            "lighting" | "robot" => {
                out.insert(s.clone());
            }
            "cameras" => out.extend(all.iter().filter(|p| p.starts_with("cameras/")).cloned()),
            "relations" => out.extend(all.iter().filter(|p| p.starts_with("relations/")).cloned()),
            other => {
                if let Some(cam) = other.strip_prefix("camera:") {
                    out.insert(format!("cameras/{cam}"));
                }
            }
        },
        ParamValue::Entity(EntityRef { id: Some(id), .. }) => {
            out.insert(format!("entities/{id}"));
            out.extend(subject_relation_paths(scene, id));
        }
        _ => {}
    }
    out
}

/// Preserve and mutable scopes of an edit, partitioning the baseline field space.
fn edit_scopes(
    intent: &IntentRepresentation,
    scene: &SceneState,
) -> Result<(BTreeSet<String>, BTreeSet<String>), IntentError> {
    let all: BTreeSet<String> = scene.field_paths().into_iter().collect();
    let mutated = mutated_paths(intent, scene);
    let named: BTreeSet<String> = list(intent, "preserve").iter().flat_map(|i| scope_item_paths(i, scene)).collect();
    let preserve: BTreeSet<String> = match intent.param("preserve_all").and_then(|v| match v {
        ParamValue::Bool(b) => Some(*b),
        _ => None,
    }) {
        None => all.difference(&mutated).cloned().collect(),
        Some(true) => all.difference(&named).cloned().collect(),
        Some(false) => named,
    };
    if let Some(conflict) = preserve.intersection(&mutated).next() {
        return Err(IntentError::InconsistentGoal(format!("{conflict} is both preserved and edited")));
    }
    let mutable = all.difference(&preserve).cloned().collect();
    Ok((preserve, mutable))
}

/// Derives the target outcome of a grounded intent. `ctx` supplies the
/// baseline that edit scopes are computed against and the resource usage
/// already spent.
pub fn goal_from_intent(intent: &IntentRepresentation, ctx: &OperationalContext) -> Result<GoalSpec, IntentError> {
    let mut goal = GoalSpec::default();
    match intent.intent_class {
        IntentClass::CreateScene | IntentClass::EditScene => {
            goal.scene_goals = scene_goals(intent);
            check_consistency(&goal.scene_goals)?;
            if intent.intent_class == IntentClass::EditScene {
                let (preserve, mutable) = edit_scopes(intent, &ctx.scene)?;
                goal.preserve_scope = preserve;
                goal.mutable_scope = mutable;
            }
        }
        IntentClass::IngestAsset => {
            if let Some(category) = intent.param("category").and_then(ParamValue::as_str) {
                goal.scene_goals.insert(ScenePredicate::AssetAvailable { category: category.to_string() });
            }
        }
        IntentClass::CollectTrajectories => {
            goal.data_goals = Some(DataGoals {
                task: intent.param("task").and_then(ParamValue::as_str).unwrap_or_default().to_string(),
                min_episodes: intent.param("episodes").and_then(ParamValue::as_int).unwrap_or(0).max(0) as u64,
                formats: formats(intent),
                stability_threshold: intent.param("stability").and_then(ParamValue::as_f64).map(OrderedFloat),
            });
        }
        IntentClass::TransformData => {
            goal.data_goals = Some(DataGoals {
                task: intent.param("dataset").and_then(ParamValue::as_str).unwrap_or_default().to_string(),
                min_episodes: 0,
                formats: formats(intent),
                stability_threshold: None,
            });
        }
        IntentClass::EditModelCode => {
            let model = intent.param("model").and_then(ParamValue::as_str).unwrap_or_default();
            goal.model_goals = Some(ModelGoals {
                code_assets: list(intent, "code_assets")
                    .iter()
                    .filter_map(ParamValue::as_str)
                    .map(|n| format!("{model}/{n}"))
                    .collect(),
                resource_baseline: OrderedFloat(ctx.model.resource_units()),
                ..ModelGoals::default()
            });
        }
        IntentClass::TrainModel => {
            let model = intent.param("model").and_then(ParamValue::as_str).unwrap_or_default().to_string();
            let dataset = intent.param("dataset").and_then(ParamValue::as_str).unwrap_or_default().to_string();
            let target = intent.param("target").and_then(ParamValue::as_f64).unwrap_or(DEFAULT_TRAIN_TARGET);
            goal.model_goals = Some(ModelGoals {
                training: Some(TrainingGoal { model, dataset, target_metric: OrderedFloat(target) }),
                resource_budget: intent.param("budget").and_then(ParamValue::as_f64).map(OrderedFloat),
                resource_baseline: OrderedFloat(ctx.model.resource_units()),
                ..ModelGoals::default()
            });
        }
        IntentClass::EvaluateModel => {
            let benchmark = intent.param("benchmark").and_then(ParamValue::as_str).unwrap_or_default().to_string();
            goal.model_goals = Some(ModelGoals {
                reports: list(intent, "models")
                    .iter()
                    .filter_map(ParamValue::as_str)
                    .map(|m| ReportPair { model: m.to_string(), benchmark: benchmark.clone() })
                    .collect(),
                resource_budget: intent.param("budget").and_then(ParamValue::as_f64).map(OrderedFloat),
                resource_baseline: OrderedFloat(ctx.model.resource_units()),
                ..ModelGoals::default()
            });
        }
    }
    Ok(goal)
}
