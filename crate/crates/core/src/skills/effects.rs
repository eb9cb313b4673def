use super::{Effect, Precondition, PreconditionViolation, SkillError, SkillSpec};
use crate::adapters::{train_metric_bound, TaskSpec, EPISODE_LENGTH, EVAL_UNIT_COST, TRAIN_UNIT_COST};
use crate::intent::{EntityRef, ParamValue, Params};
use crate::planner::{micro, AbstractState};
use crate::state::SpatialPredicate;

/// Resolves a reference to a single abstract entity id.
pub fn resolve_abstract_entity(s: &AbstractState, r: &EntityRef) -> Result<String, String> {
    let ids: Vec<&String> = s.matching(r).collect();
    match ids.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(format!("no entity matches {r}")),
        _ => Err(format!("{r} matches {} entities", ids.len())),
    }
}

fn str_of<'a>(params: &'a Params, name: &str) -> &'a str {
    params.get(name).and_then(ParamValue::as_str).unwrap_or_default()
}

fn entity_of(params: &Params, name: &str) -> EntityRef {
    params.get(name).and_then(ParamValue::as_entity).cloned().unwrap_or_else(|| EntityRef::category(""))
}

fn int_of(params: &Params, name: &str) -> u64 {
    params.get(name).and_then(ParamValue::as_int).unwrap_or(0).max(0) as u64
}

fn predicate_of(params: &Params, name: &str) -> SpatialPredicate {
    params.get(name).and_then(ParamValue::as_str).and_then(SpatialPredicate::parse).unwrap_or(SpatialPredicate::On)
}

fn holds(pre: &Precondition, params: &Params, s: &AbstractState) -> Result<(), String> {
    let fail = |m: String| Err(m);
    match pre {
        Precondition::SceneNonempty => {
            if s.entities.is_empty() {
                return fail("scene has no entities".into());
            }
        }
        Precondition::AssetAvailable { param } => {
            let c = str_of(params, param);
            if !s.asset_categories.contains(c) {
                return fail(format!("no registered asset of category {c}"));
            }
        }
        Precondition::InCatalog { param } => {
            let c = str_of(params, param);
            if !s.env.catalog.contains(c) {
                return fail(format!("catalog has no {c}"));
            }
        }
        Precondition::AssetMissing { param } => {
            let c = str_of(params, param);
            if s.asset_categories.contains(c) {
                return fail(format!("asset of category {c} already registered"));
            }
        }
        Precondition::EntityExists { param } => {
            resolve_abstract_entity(s, &entity_of(params, param))?;
        }
        Precondition::DistinctEntities { a, b } => {
            let x = resolve_abstract_entity(s, &entity_of(params, a))?;
            let y = resolve_abstract_entity(s, &entity_of(params, b))?;
            if x == y {
                return fail(format!("{a} and {b} are the same entity"));
            }
        }
        Precondition::RelationExists { subject, predicate, object } => {
            let x = resolve_abstract_entity(s, &entity_of(params, subject))?;
            let y = resolve_abstract_entity(s, &entity_of(params, object))?;
            let p = predicate_of(params, predicate);
            if !s.relations.contains(&(x.clone(), p, y.clone())) {
                return fail(format!("relation {x} {p} {y} not asserted"));
            }
        }
        Precondition::KnownRobot { param } => {
            let m = str_of(params, param);
            if !s.env.robots.contains(m) {
                return fail(format!("unknown robot {m}"));
            }
        }
        Precondition::RobotPresent => {
            if s.robot.is_none() {
                return fail("scene has no robot".into());
            }
        }
        Precondition::CameraExists { param } => {
            let c = str_of(params, param);
            if !s.cameras.contains_key(c) {
                return fail(format!("no camera {c}"));
            }
        }
        Precondition::TaskEntitiesPresent { param } => {
            let t = str_of(params, param);
            let spec = TaskSpec::parse(t).ok_or_else(|| format!("unknown task {t}"))?;
            let missing: Vec<&str> = spec.categories().into_iter().filter(|c| s.count_of(c) == 0).collect();
            if !missing.is_empty() {
                return fail(format!("task {t} needs {}", missing.join(", ")));
            }
        }
        Precondition::EpisodesAvailable { param } => {
            let t = str_of(params, param);
            if s.successes(t) == 0 {
                return fail(format!("no successful episodes for {t}"));
            }
        }
        Precondition::KnownModel { param } => {
            let m = str_of(params, param);
            if !s.model_known(m) {
                return fail(format!("unknown model {m}"));
            }
        }
        Precondition::TrainableModel { param } => {
            let m = str_of(params, param);
            if !s.model_trainable(m) {
                return fail(format!("model {m} has neither a pretrained stub nor code"));
            }
        }
        Precondition::CodeValid { param } => {
            let m = str_of(params, param);
            let prefix = format!("{m}/");
            if let Some((id, _)) = s.code.iter().find(|(id, ok)| id.starts_with(&prefix) && !**ok) {
                return fail(format!("code asset {id} is not valid"));
            }
        }
        Precondition::KnownBenchmark { param } => {
            let b = str_of(params, param);
            if !s.env.benchmarks.contains(b) {
                return fail(format!("unknown benchmark {b}"));
            }
        }
    }
    Ok(())
}

/// Violated preconditions of a call in an abstract state, in declaration order.
pub fn check_abstract_preconditions(spec: &SkillSpec, params: &Params, s: &AbstractState) -> Vec<PreconditionViolation> {
    spec.preconditions
        .iter()
        .filter_map(|p| holds(p, params, s).err().map(|detail| PreconditionViolation { rule: p.rule().into(), detail }))
        .collect()
}

fn touch_entity(s: &mut AbstractState, id: &str) {
    s.touched.insert(format!("entities/{id}"));
}

fn touch_relation(s: &mut AbstractState, r: &(String, SpatialPredicate, String)) {
    s.touched.insert(format!("relations/{}/{}/{}", r.0, r.1, r.2));
}

fn apply_one(effect: Effect, params: &Params, s: &mut AbstractState) -> Result<(), String> {
    match effect {
        Effect::Identity => {}
        Effect::AddEntity => {
            let c = str_of(params, "category");
            let id = s.next_placeholder(c);
            s.entities.insert(id, c.to_string());
        }
        Effect::RemoveEntity => {
            let id = resolve_abstract_entity(s, &entity_of(params, "entity"))?;
            s.entities.remove(&id);
            touch_entity(s, &id);
            let gone: Vec<_> = s.relations.iter().filter(|r| r.0 == id || r.2 == id).cloned().collect();
            for r in gone {
                touch_relation(s, &r);
                s.relations.remove(&r);
            }
        }
        Effect::SetRelation => {
            let a = resolve_abstract_entity(s, &entity_of(params, "subject"))?;
            let b = resolve_abstract_entity(s, &entity_of(params, "object"))?;
            let p = predicate_of(params, "predicate");
            let old: Vec<_> = s.relations.iter().filter(|r| r.0 == a).cloned().collect();
            for r in old {
                touch_relation(s, &r);
                s.relations.remove(&r);
            }
            let new = (a.clone(), p, b);
            touch_relation(s, &new);
            touch_entity(s, &a);
            s.relations.insert(new);
        }
        Effect::ClearRelation => {
            let a = resolve_abstract_entity(s, &entity_of(params, "subject"))?;
            let b = resolve_abstract_entity(s, &entity_of(params, "object"))?;
            let r = (a, predicate_of(params, "predicate"), b);
            touch_relation(s, &r);
            s.relations.remove(&r);
        }
        Effect::SetLighting => {
            if let Some(v) = params.get("intensity").and_then(ParamValue::as_f64) {
                s.lighting = micro(v);
            }
            if let Some(v) = params.get("color_temperature").and_then(ParamValue::as_f64) {
                s.color_temperature = micro(v);
            }
            s.touched.insert("lighting".into());
        }
        Effect::SetCamera => {
            let c = str_of(params, "camera").to_string();
            let fov = params.get("fov").and_then(ParamValue::as_f64).unwrap_or_default();
            s.touched.insert(format!("cameras/{c}"));
            s.cameras.insert(c, micro(fov));
        }
        Effect::RemoveCamera => {
            let c = str_of(params, "camera").to_string();
            s.touched.insert(format!("cameras/{c}"));
            s.cameras.remove(&c);
        }
        Effect::SetRobot => {
            s.robot = Some(str_of(params, "model").to_string());
            s.touched.insert("robot".into());
        }
        Effect::RegisterAsset => {
            s.asset_categories.insert(str_of(params, "category").to_string());
        }
        Effect::AddEpisodes => {
            let t = str_of(params, "task").to_string();
            let n = int_of(params, "count");
            s.episodes.entry(t).or_default().add(EPISODE_LENGTH, true, n);
        }
        Effect::Export => {
            let f = str_of(params, "format").parse().map_err(|_| "unsupported format".to_string())?;
            let t = str_of(params, "task").to_string();
            let n = s.successes(&t);
            s.exports.insert(f, (t, n));
        }
        Effect::EditCode => {
            s.code.insert(format!("{}/{}", str_of(params, "model"), str_of(params, "name")), true);
        }
        Effect::Train => {
            let m = str_of(params, "model").to_string();
            let d = str_of(params, "dataset").to_string();
            let epochs = int_of(params, "epochs");
            s.trained.insert(m, (d, micro(train_metric_bound(epochs as u32))));
            s.resources += micro(epochs as f64 * TRAIN_UNIT_COST);
        }
        Effect::Evaluate => {
            s.reports.insert((str_of(params, "model").to_string(), str_of(params, "benchmark").to_string()));
            s.resources += micro(int_of(params, "episodes") as f64 * EVAL_UNIT_COST);
        }
    }
    Ok(())
}

/// Abstract transition of a call. Pure: returns a new state and leaves
/// descriptors outside the skill's `writes` untouched.
pub fn apply_abstract_effect(spec: &SkillSpec, params: &Params, s: &AbstractState) -> Result<AbstractState, SkillError> {
    spec.check_params(params)?;
    if let Some(v) = check_abstract_preconditions(spec, params, s).into_iter().next() {
        return Err(SkillError::PreconditionFailure { skill: spec.skill_id.clone(), rule: v.rule, detail: v.detail });
    }
    let mut next = s.clone();
    for e in &spec.effects {
        apply_one(*e, params, &mut next).map_err(|detail| SkillError::PreconditionFailure {
            skill: spec.skill_id.clone(),
            rule: "effect-applicable".into(),
            detail,
        })?;
    }
    Ok(next)
}
