//! Workflow planning: a best-first branch-and-bound search over abstract
//! states for the skill sequence minimizing
//! `J = Σ human + α Σ (sys_time + sys_tokens) + λ d(final, goal)`.

mod state;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{train_metric_bound, AssetLibrary};
use crate::deviation::{abstract_deviation, abstract_predicate_holds, DeviationTerms, DeviationWeights};
use crate::intent::{GoalSpec, IntentRepresentation, ParamValue, Params, ScenePredicate};
use crate::skills::{
    apply_abstract_effect, check_abstract_preconditions, instantiate_postconditions, Effect, SkillCall, SkillLibrary,
};
use crate::state::{hash_bytes, OperationalContext};

pub use state::{is_placeholder, micro, AbstractState, EpisodeStats, StaticEnv, MICRO};

/// Field of view given to cameras the goal does not specify.
pub const DEFAULT_FOV: f64 = 60.0;
/// Evaluation episodes when the intent gives none.
pub const DEFAULT_EVAL_EPISODES: u64 = 50;
/// Upper bound on planned training epochs.
pub const MAX_EPOCHS: u32 = 100;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum PlannerError {
    #[error("no skill is applicable toward the goal")]
    NoApplicableSkills,
    #[error("planning budget of {0} node expansions exceeded")]
    PlanningBudgetExceeded(usize),
    #[error("unknown skill {0}")]
    UnknownSkill(String),
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub alpha: f64,
    pub lambda: f64,
    pub weights: DeviationWeights,
    pub max_depth: usize,
    pub max_expansions: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { alpha: 1.0, lambda: 10.0, weights: DeviationWeights::default(), max_depth: 16, max_expansions: 100_000 }
    }
}

impl CostModel {
    pub fn check(&self) -> Result<(), PlannerError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.lambda) || !self.weights.is_valid() {
            return Err(PlannerError::InvalidCostModel(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Predicted cost and deviation of a workflow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub human: f64,
    pub sys_time: f64,
    pub sys_tokens: f64,
    /// Predicted aggregate deviation of the final abstract state.
    pub deviation: f64,
    pub terms: DeviationTerms,
    pub objective: f64,
}

/// Parameter values the goal leaves open, taken from the intent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanHints {
    pub epochs: Option<u32>,
    pub eval_episodes: Option<u64>,
}

impl PlanHints {
    pub fn from_intent(intent: &IntentRepresentation) -> Self {
        let int = |k: &str| intent.param(k).and_then(ParamValue::as_int).filter(|n| *n > 0);
        let eval = intent.intent_class == crate::intent::IntentClass::EvaluateModel;
        PlanHints {
            epochs: int("epochs").map(|n| n.min(u32::MAX as i64) as u32),
            eval_episodes: if eval { int("episodes").map(|n| n as u64) } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workflow {
    pub id: String,
    /// Digest of the intent the workflow serves.
    pub intent_id: String,
    pub calls: Vec<SkillCall>,
    pub predicted: ObjectiveBreakdown,
    pub goal: GoalSpec,
    pub hints: PlanHints,
}

impl Workflow {
    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }
}

/// Digest identifying an intent.
pub fn intent_id(intent: &IntentRepresentation) -> String {
    hash_bytes(&serde_json::to_vec(intent).expect("intent serializes"))[..16].to_string()
}

fn str_param(k: &str, v: impl Into<String>) -> (String, ParamValue) {
    (k.to_string(), ParamValue::Str(v.into()))
}

fn params<const N: usize>(items: [(String, ParamValue); N]) -> Params {
    items.into_iter().collect()
}

/// Smallest epoch count whose worst-case training metric meets `target`.
pub fn epochs_for_target(target: f64) -> u32 {
    (1..=MAX_EPOCHS).find(|e| train_metric_bound(*e) <= target).unwrap_or(MAX_EPOCHS)
}

fn goal_categories(goal: &GoalSpec) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    for p in &goal.scene_goals {
        match p {
            ScenePredicate::EntityExists { entity } if entity.id.is_none() => {
                out.insert(entity.category.as_str());
            }
            ScenePredicate::RelationHolds { subject, object, .. } => {
                for r in [subject, object] {
                    if r.id.is_none() {
                        out.insert(r.category.as_str());
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Parameter bindings an effect could usefully take in state `s` toward
/// `goal`. The planner only considers these.
fn effect_candidates(effect: Effect, s: &AbstractState, goal: &GoalSpec, hints: &PlanHints) -> Vec<Params> {
    let unsatisfied = || goal.scene_goals.iter().filter(|p| !abstract_predicate_holds(s, p));
    let mut out: Vec<Params> = Vec::new();
    match effect {
        Effect::Identity => {}
        Effect::AddEntity => {
            for c in goal_categories(goal) {
                if s.count_of(c) == 0 {
                    out.push(params([str_param("category", c)]));
                }
            }
        }
        Effect::RegisterAsset => {
            let mut needed: BTreeSet<&str> = goal_categories(goal).into_iter().filter(|c| s.count_of(c) == 0).collect();
            for p in &goal.scene_goals {
                if let ScenePredicate::AssetAvailable { category } = p {
                    needed.insert(category);
                }
            }
            for c in needed {
                if !s.asset_categories.contains(c) && s.env.catalog.contains(c) {
                    out.push(params([str_param("category", c)]));
                }
            }
        }
        Effect::RemoveEntity => {
            for p in unsatisfied() {
                if let ScenePredicate::EntityAbsent { entity } = p {
                    for id in s.matching(entity) {
                        out.push(params([("entity".into(), ParamValue::Entity(s.entity_ref(id)))]));
                    }
                }
            }
        }
        Effect::SetRelation => {
            for p in unsatisfied() {
                if let ScenePredicate::RelationHolds { subject, predicate, object } = p {
                    for a in s.matching(subject) {
                        for b in s.matching(object) {
                            if a != b {
                                out.push(params([
                                    ("subject".into(), ParamValue::Entity(s.entity_ref(a))),
                                    str_param("predicate", predicate.as_str()),
                                    ("object".into(), ParamValue::Entity(s.entity_ref(b))),
                                ]));
                            }
                        }
                    }
                }
            }
        }
        Effect::ClearRelation => {
            for p in unsatisfied() {
                if let ScenePredicate::RelationAbsent { subject, predicate, object } = p {
                    for (a, q, b) in &s.relations {
                        if q == predicate && s.matches(a, subject) && s.matches(b, object) {
                            out.push(params([
                                ("subject".into(), ParamValue::Entity(s.entity_ref(a))),
                                str_param("predicate", predicate.as_str()),
                                ("object".into(), ParamValue::Entity(s.entity_ref(b))),
                            ]));
                        }
                    }
                }
            }
        }
        Effect::SetLighting => {
            let mut p = Params::new();
            for g in unsatisfied() {
                match g {
                    ScenePredicate::LightingInRange { min, max } => {
                        p.insert("intensity".into(), ParamValue::num((min.0 + max.0) / 2.0));
                    }
                    ScenePredicate::ColorTemperatureInRange { min, max } => {
                        p.insert("color_temperature".into(), ParamValue::num((min.0 + max.0) / 2.0));
                    }
                    _ => {}
                }
            }
            if !p.is_empty() {
                out.push(p);
            }
        }
        Effect::SetCamera => {
            for g in unsatisfied() {
                match g {
                    ScenePredicate::CameraPresent { id, fov } => {
                        let fov = fov.map(|f| f.0).unwrap_or(DEFAULT_FOV);
                        out.push(params([str_param("camera", id.as_str()), ("fov".into(), ParamValue::num(fov))]));
                    }
                    ScenePredicate::CameraCount { min, .. } if s.cameras.len() < *min as usize => {
                        let reserved = |c: &str| {
                            goal.scene_goals.iter().any(|g| matches!(g, ScenePredicate::CameraAbsent { id } if id == c))
                        };
                        let id = (0..)
                            .map(|k| format!("cam{k}"))
                            .find(|c| !s.cameras.contains_key(c) && !reserved(c))
                            .expect("unbounded range");
                        out.push(params([str_param("camera", id), ("fov".into(), ParamValue::num(DEFAULT_FOV))]));
                    }
                    _ => {}
                }
            }
        }
        Effect::RemoveCamera => {
            for g in unsatisfied() {
                match g {
                    ScenePredicate::CameraAbsent { id } => out.push(params([str_param("camera", id.as_str())])),
                    ScenePredicate::CameraCount { max, .. } if s.cameras.len() > *max as usize => {
                        let required = |c: &str| {
                            goal.scene_goals.iter().any(|g| matches!(g, ScenePredicate::CameraPresent { id, .. } if id == c))
                        };
                        for c in s.cameras.keys().filter(|c| !required(c)) {
                            out.push(params([str_param("camera", c.as_str())]));
                        }
                    }
                    _ => {}
                }
            }
        }
        Effect::SetRobot => {
            for g in unsatisfied() {
                if let ScenePredicate::RobotIs { model } = g {
                    out.push(params([str_param("model", model.as_str())]));
                }
            }
        }
        Effect::AddEpisodes => {
            if let Some(d) = &goal.data_goals {
                let have = s.successes(&d.task);
                if have < d.min_episodes {
                    out.push(params([
                        str_param("task", d.task.as_str()),
                        ("count".into(), ParamValue::Int((d.min_episodes - have) as i64)),
                    ]));
                }
            }
        }
        Effect::Export => {
            if let Some(d) = &goal.data_goals {
                let have = s.successes(&d.task);
                for f in &d.formats {
                    let fresh = s.exports.get(f).is_some_and(|(t, n)| t == &d.task && *n == have);
                    if !fresh {
                        out.push(params([str_param("format", f.as_str()), str_param("task", d.task.as_str())]));
                    }
                }
            }
        }
        Effect::EditCode => {
            if let Some(m) = &goal.model_goals {
                for id in &m.code_assets {
                    if s.code.get(id) != Some(&true) {
                        if let Some((model, name)) = id.split_once('/') {
                            out.push(params([str_param("model", model), str_param("name", name)]));
                        }
                    }
                }
            }
        }
        Effect::Train => {
            if let Some(t) = goal.model_goals.as_ref().and_then(|m| m.training.as_ref()) {
                let target = t.target_metric.0;
                let met = s
                    .trained
                    .get(&t.model)
                    .is_some_and(|(d, m)| d == &t.dataset && (*m as f64 / MICRO) <= target);
                if !met {
                    let epochs = hints.epochs.unwrap_or_else(|| epochs_for_target(target));
                    out.push(params([
                        str_param("model", t.model.as_str()),
                        str_param("dataset", t.dataset.as_str()),
                        ("epochs".into(), ParamValue::Int(epochs as i64)),
                    ]));
                }
            }
        }
        Effect::Evaluate => {
            if let Some(m) = &goal.model_goals {
                let episodes = hints.eval_episodes.unwrap_or(DEFAULT_EVAL_EPISODES);
                for r in &m.reports {
                    if !s.reports.contains(&(r.model.clone(), r.benchmark.clone())) {
                        out.push(params([
                            str_param("model", r.model.as_str()),
                            str_param("benchmark", r.benchmark.as_str()),
                            ("episodes".into(), ParamValue::Int(episodes as i64)),
                        ]));
                    }
                }
            }
        }
    }
    out
}

/// Applicable calls from `s` toward `goal`, in (skill id, parameters)
/// order, each paired with its successor state.
pub fn candidate_calls(
    s: &AbstractState,
    goal: &GoalSpec,
    hints: &PlanHints,
    lib: &SkillLibrary,
) -> Vec<(SkillCall, AbstractState)> {
    let mut out = Vec::new();
    for spec in lib.skills() {
        let mut seen = BTreeSet::new();
        for effect in &spec.effects {
            for p in effect_candidates(*effect, s, goal, hints) {
                if !seen.insert(p.clone()) || spec.check_params(&p).is_err() {
                    continue;
                }
                if !check_abstract_preconditions(spec, &p, s).is_empty() {
                    continue;
                }
                if let Ok(next) = apply_abstract_effect(spec, &p, s) {
                    out.push((SkillCall::new(spec.skill_id.clone(), p), next));
                }
            }
        }
    }
    out
}

fn step_cost(lib: &SkillLibrary, call: &SkillCall, alpha: f64) -> Result<f64, PlannerError> {
    let spec = lib.get(&call.skill_id).ok_or_else(|| PlannerError::UnknownSkill(call.skill_id.clone()))?;
    Ok(spec.cost.human + alpha * spec.cost.system())
}

/// Objective of a sequence from `start`, or an error when a call is
/// unknown or not applicable.
pub fn evaluate_sequence(
    start: &AbstractState,
    calls: &[SkillCall],
    goal: &GoalSpec,
    lib: &SkillLibrary,
    cost: &CostModel,
) -> Result<(ObjectiveBreakdown, AbstractState), PlannerError> {
    let mut b = ObjectiveBreakdown::default();
    let mut s = start.clone();
    for c in calls {
        let spec = lib.get(&c.skill_id).ok_or_else(|| PlannerError::UnknownSkill(c.skill_id.clone()))?;
        s = apply_abstract_effect(spec, &c.params, &s).map_err(|_| PlannerError::NoApplicableSkills)?;
        b.human += spec.cost.human;
        b.sys_time += spec.cost.sys_time;
        b.sys_tokens += spec.cost.sys_tokens;
    }
    let d = abstract_deviation(&s, goal, cost.weights);
    b.deviation = d.total;
    b.terms = d.terms;
    b.objective = b.human + cost.alpha * (b.sys_time + b.sys_tokens) + cost.lambda * d.total;
    Ok((b, s))
}

/// Predicted breakdown of a workflow executed from `start`.
pub fn estimate_cost(
    wf: &Workflow,
    start: &AbstractState,
    lib: &SkillLibrary,
    cost: &CostModel,
) -> Result<ObjectiveBreakdown, PlannerError> {
    for c in &wf.calls {
        lib.require(&c.skill_id).map_err(|_| PlannerError::UnknownSkill(c.skill_id.clone()))?;
    }
    evaluate_sequence(start, &wf.calls, &wf.goal, lib, cost).map(|(b, _)| b)
}

struct Node {
    g: f64,
    state: AbstractState,
    seq: Vec<SkillCall>,
}

type QueueKey = Reverse<(OrderedFloat<f64>, usize, Vec<(String, Params)>, usize)>;

fn seq_key(seq: &[SkillCall]) -> Vec<(String, Params)> {
    seq.iter().map(|c| (c.skill_id.clone(), c.params.clone())).collect()
}

/// Whether outcome `a` = (J, length, sequence) beats `b`.
fn better(a: (f64, &[SkillCall]), b: (f64, &[SkillCall])) -> bool {
    if a.0 < b.0 - EPS {
        return true;
    }
    if a.0 > b.0 + EPS {
        return false;
    }
    if a.1.len() != b.1.len() {
        return a.1.len() < b.1.len();
    }
    seq_key(a.1) < seq_key(b.1)
}

/// Core search from an abstract state. `exclude_first` removes one call
/// (by skill id and parameters) from the first position.
pub fn search(
    root: &AbstractState,
    goal: &GoalSpec,
    hints: &PlanHints,
    lib: &SkillLibrary,
    cost: &CostModel,
    exclude_first: Option<&SkillCall>,
) -> Result<(Vec<SkillCall>, ObjectiveBreakdown), PlannerError> {
    cost.check()?;
    let d_of = |s: &AbstractState| abstract_deviation(s, goal, cost.weights).total;
    let d0 = d_of(root);
    let mut best_j = cost.lambda * d0;
    let mut best_seq: Vec<SkillCall> = Vec::new();

    let mut arena: Vec<Node> = vec![Node { g: 0.0, state: root.clone(), seq: Vec::new() }];
    let mut heap: BinaryHeap<QueueKey> = BinaryHeap::new();
    heap.push(Reverse((OrderedFloat(best_j), 0, Vec::new(), 0)));
    // Non-dominated (g, depth, sequence) entries per abstract state.
    let mut seen: HashMap<AbstractState, Vec<(f64, usize, Vec<(String, Params)>)>> = HashMap::new();
    seen.insert(root.clone(), vec![(0.0, 0, Vec::new())]);

    let mut expansions = 0usize;
    let mut root_applicable = false;
    while let Some(Reverse((_, _, key, idx))) = heap.pop() {
        let (g, depth) = (arena[idx].g, arena[idx].seq.len());
        if g > best_j + EPS || depth >= cost.max_depth {
            continue;
        }
        // A path pushed earlier may since have been dominated by a cheaper,
        // shorter or lexicographically smaller path to the same state.
        let current = seen
            .get(&arena[idx].state)
            .is_some_and(|es| es.iter().any(|(eg, ed, ek)| *eg == g && *ed == depth && *ek == key));
        if !current {
            continue;
        }
        expansions += 1;
        if expansions > cost.max_expansions {
            return Err(PlannerError::PlanningBudgetExceeded(cost.max_expansions));
        }
        let state = arena[idx].state.clone();
        let prefix = arena[idx].seq.clone();
        for (call, next) in candidate_calls(&state, goal, hints, lib) {
            if depth == 0 {
                if exclude_first.is_some_and(|x| x.same_call(&call)) {
                    continue;
                }
                root_applicable = true;
            }
            let g2 = g + step_cost(lib, &call, cost.alpha)?;
            if g2 > best_j + EPS {
                continue;
            }
            let mut seq = prefix.clone();
            seq.push(call);
            let key = seq_key(&seq);
            let entries = seen.entry(next.clone()).or_default();
            let dominated = entries.iter().any(|(eg, ed, es)| {
                *eg <= g2 + EPS && *ed <= seq.len() && (*eg < g2 - EPS || *ed < seq.len() || *es <= key)
            });
            if dominated {
                continue;
            }
            entries.retain(|(eg, ed, es)| {
                !(g2 <= *eg + EPS && seq.len() <= *ed && (g2 < *eg - EPS || seq.len() < *ed || key <= *es))
            });
            entries.push((g2, seq.len(), key.clone()));
            let j = g2 + cost.lambda * d_of(&next);
            if better((j, &seq), (best_j, &best_seq)) {
                best_j = j;
                best_seq = seq.clone();
            }
            let depth2 = seq.len();
            arena.push(Node { g: g2, state: next, seq });
            heap.push(Reverse((OrderedFloat(j), depth2, key, arena.len() - 1)));
        }
    }
    if d0 > 0.0 && !root_applicable {
        return Err(PlannerError::NoApplicableSkills);
    }
    let (breakdown, _) = evaluate_sequence(root, &best_seq, goal, lib, cost)?;
    Ok((best_seq, breakdown))
}

fn with_postconditions(calls: Vec<SkillCall>, root: &AbstractState, lib: &SkillLibrary) -> Vec<SkillCall> {
    let mut s = root.clone();
    calls
        .into_iter()
        .map(|mut c| {
            if let Some(spec) = lib.get(&c.skill_id) {
                c.postconditions = instantiate_postconditions(spec, &c.params, &s);
                if let Ok(next) = apply_abstract_effect(spec, &c.params, &s) {
                    s = next;
                }
            }
            c
        })
        .collect()
}

fn workflow(
    intent_id: String,
    calls: Vec<SkillCall>,
    predicted: ObjectiveBreakdown,
    goal: &GoalSpec,
    hints: PlanHints,
) -> Workflow {
    let keys: Vec<_> = calls.iter().map(|c| c.key()).collect();
    let digest = hash_bytes(&serde_json::to_vec(&(&intent_id, keys)).expect("calls serialize"));
    Workflow { id: digest[..16].to_string(), intent_id, calls, predicted, goal: goal.clone(), hints }
}

/// Plans a workflow for a grounded intent from the given context.
pub fn plan(
    intent: &IntentRepresentation,
    goal: &GoalSpec,
    ctx: &OperationalContext,
    lib: &SkillLibrary,
    assets: &AssetLibrary,
    cost: &CostModel,
) -> Result<Workflow, PlannerError> {
    let root = AbstractState::from_context(ctx, assets);
    let hints = PlanHints::from_intent(intent);
    let (calls, predicted) = search(&root, goal, &hints, lib, cost, None)?;
    let calls = with_postconditions(calls, &root, lib);
    Ok(workflow(intent_id(intent), calls, predicted, goal, hints))
}

/// Fresh plan from the post-rollback context toward the same goal, never
/// starting with the call that failed at `failed_index`.
pub fn replan(
    wf: &Workflow,
    failed_index: usize,
    ctx_now: &OperationalContext,
    lib: &SkillLibrary,
    assets: &AssetLibrary,
    cost: &CostModel,
) -> Result<Workflow, PlannerError> {
    let root = AbstractState::from_context(ctx_now, assets);
    let failed = wf.calls.get(failed_index);
    let (calls, predicted) = search(&root, &wf.goal, &wf.hints, lib, cost, failed)?;
    let calls = with_postconditions(calls, &root, lib);
    Ok(workflow(wf.intent_id.clone(), calls, predicted, &wf.goal, wf.hints.clone()))
}

/// Human-readable differences between two abstract states.
pub fn state_delta(a: &AbstractState, b: &AbstractState) -> Vec<String> {
    let mut out = Vec::new();
    for (id, c) in &b.entities {
        if !a.entities.contains_key(id) {
            out.push(format!("+entity {id} ({c})"));
        }
    }
    for (id, c) in &a.entities {
        if !b.entities.contains_key(id) {
            out.push(format!("-entity {id} ({c})"));
        }
    }
    for r in b.relations.difference(&a.relations) {
        out.push(format!("+relation {} {} {}", r.0, r.1, r.2));
    }
    for r in a.relations.difference(&b.relations) {
        out.push(format!("-relation {} {} {}", r.0, r.1, r.2));
    }
    if a.robot != b.robot {
        out.push(format!("robot {:?} -> {:?}", a.robot, b.robot));
    }
    if a.lighting != b.lighting {
        out.push(format!("lighting.intensity {} -> {}", a.lighting as f64 / MICRO, b.lighting as f64 / MICRO));
    }
    if a.color_temperature != b.color_temperature {
        out.push(format!(
            "lighting.color_temperature {} -> {}",
            a.color_temperature as f64 / MICRO,
            b.color_temperature as f64 / MICRO
        ));
    }
    let cams: BTreeSet<&String> = a.cameras.keys().chain(b.cameras.keys()).collect();
    for c in cams {
        match (a.cameras.get(c), b.cameras.get(c)) {
            (None, Some(f)) => out.push(format!("+camera {c} fov {}", *f as f64 / MICRO)),
            (Some(_), None) => out.push(format!("-camera {c}")),
            (Some(x), Some(y)) if x != y => out.push(format!("camera {c} fov {} -> {}", *x as f64 / MICRO, *y as f64 / MICRO)),
            _ => {}
        }
    }
    for c in b.asset_categories.difference(&a.asset_categories) {
        out.push(format!("+asset {c}"));
    }
    for (t, st) in &b.episodes {
        let before = a.episodes.get(t).copied().unwrap_or_default();
        if before != *st {
            out.push(format!("episodes {t}: {} -> {} successful", before.successes, st.successes));
        }
    }
    for (f, v) in &b.exports {
        if a.exports.get(f) != Some(v) {
            out.push(format!("export {f} covers {} of {}", v.1, v.0));
        }
    }
    for (id, ok) in &b.code {
        if a.code.get(id) != Some(ok) {
            out.push(format!("code {id} valid={ok}"));
        }
    }
    for (m, (d, metric)) in &b.trained {
        if a.trained.get(m) != Some(&(d.clone(), *metric)) {
            out.push(format!("checkpoint {m} on {d}, metric <= {}", *metric as f64 / MICRO));
        }
    }
    for (m, bench) in b.reports.difference(&a.reports) {
        out.push(format!("+report {m} on {bench}"));
    }
    if a.resources != b.resources {
        out.push(format!("resources {} -> {}", a.resources as f64 / MICRO, b.resources as f64 / MICRO));
    }
    out
}

/// One step of a dry-run listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DryRunStep {
    pub index: usize,
    pub call: String,
    pub skill_id: String,
    pub params: Params,
    pub delta: Vec<String>,
    pub deviation_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DryRun {
    pub workflow_id: String,
    pub steps: Vec<DryRunStep>,
    pub objective: ObjectiveBreakdown,
}

/// Per-step abstract deltas and predicted deviation of a workflow.
pub fn dry_run(wf: &Workflow, start: &AbstractState, lib: &SkillLibrary, cost: &CostModel) -> Result<DryRun, PlannerError> {
    let mut s = start.clone();
    let mut steps = Vec::new();
    for (i, c) in wf.calls.iter().enumerate() {
        let spec = lib.get(&c.skill_id).ok_or_else(|| PlannerError::UnknownSkill(c.skill_id.clone()))?;
        let next = apply_abstract_effect(spec, &c.params, &s).map_err(|_| PlannerError::NoApplicableSkills)?;
        steps.push(DryRunStep {
            index: i,
            call: c.label(),
            skill_id: c.skill_id.clone(),
            params: c.params.clone(),
            delta: state_delta(&s, &next),
            deviation_after: abstract_deviation(&next, &wf.goal, cost.weights).total,
        });
        s = next;
    }
    Ok(DryRun { workflow_id: wf.id.clone(), steps, objective: estimate_cost(wf, start, lib, cost)? })
}

impl DryRun {
    pub fn to_text(&self) -> String {
        let mut out = format!("workflow {}\n", self.workflow_id);
        for s in &self.steps {
            out.push_str(&format!("{:>2}. {}\n", s.index + 1, s.call));
            for d in &s.delta {
                out.push_str(&format!("      {d}\n"));
            }
            out.push_str(&format!("      predicted deviation {:.4}\n", s.deviation_after));
        }
        let o = &self.objective;
        out.push_str(&format!(
            "objective J={:.4} (human {:.2}, sys_time {:.2}, sys_tokens {:.2}, deviation {:.4})\n",
            o.objective, o.human, o.sys_time, o.sys_tokens, o.deviation
        ));
        out
    }
}

/// The abstract environment shared by every state of one planning problem.
pub fn static_env(assets: &AssetLibrary) -> Arc<StaticEnv> {
    Arc::new(StaticEnv::from_library(assets))
}

/// Abstract states along a sequence, starting with `start`.
pub fn trajectory(start: &AbstractState, calls: &[SkillCall], lib: &SkillLibrary) -> BTreeMap<usize, AbstractState> {
    let mut out = BTreeMap::from([(0, start.clone())]);
    let mut s = start.clone();
    for (i, c) in calls.iter().enumerate() {
        let Some(spec) = lib.get(&c.skill_id) else { break };
        let Ok(next) = apply_abstract_effect(spec, &c.params, &s) else { break };
        s = next;
        out.insert(i + 1, s.clone());
    }
    out
}
