//! Normalized goal-deviation terms over scene, data and model state, and
//! their weighted aggregate.
//!
//! Every term lies in `[0, 1]`. The aggregate is
//! `(Δgoal + ρΔpres) + (Δtask + ηΔstab + κΔfmt) + (Δcode + μΔtrain + νΔeval + ξΔres)`;
//! goal sections that are absent contribute zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::validate_format;
use crate::intent::{DataGoals, GoalSpec, ModelGoals, ScenePredicate};
use crate::planner::{micro, AbstractState, EpisodeStats, MICRO};
use crate::skills::{asset_available, ref_matches, relation_holds};
use crate::state::{DataState, ModelState, OperationalContext, SceneState, SnapshotId};

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum DeviationError {
    #[error("undecidable predicate: {0}")]
    UndecidablePredicate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviationWeights {
    pub rho: f64,
    pub eta: f64,
    pub kappa: f64,
    pub mu: f64,
    pub nu: f64,
    pub xi: f64,
}

impl Default for DeviationWeights {
    fn default() -> Self {
        DeviationWeights { rho: 1.0, eta: 1.0, kappa: 1.0, mu: 1.0, nu: 1.0, xi: 1.0 }
    }
}

impl DeviationWeights {
    pub fn is_valid(&self) -> bool {
        [self.rho, self.eta, self.kappa, self.mu, self.nu, self.xi].iter().all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// Per-term values, the weights used and the aggregate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationTerms {
    pub goal: f64,
    pub pres: f64,
    pub task: f64,
    pub stab: f64,
    pub fmt: f64,
    pub code: f64,
    pub train: f64,
    pub eval: f64,
    pub res: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub terms: DeviationTerms,
    pub weights: DeviationWeights,
    pub total: f64,
    /// Snapshot of the edit baseline used for preservation, if any.
    pub baseline: Option<SnapshotId>,
}

impl DeviationReport {
    pub fn new(terms: DeviationTerms, weights: DeviationWeights) -> Self {
        let t = terms;
        let w = weights;
        let total = (t.goal + w.rho * t.pres)
            + (t.task + w.eta * t.stab + w.kappa * t.fmt)
            + (t.code + w.mu * t.train + w.nu * t.eval + w.xi * t.res);
        DeviationReport { terms, weights, total, baseline: None }
    }

    pub fn with_baseline(mut self, id: Option<SnapshotId>) -> Self {
        self.baseline = id;
        self
    }
}

fn clip01(v: f64) -> f64 {
    if v.is_nan() {
        1.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn fraction(bad: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

fn check_decidable(p: &ScenePredicate) -> Result<(), DeviationError> {
    let bad = |m: String| Err(DeviationError::UndecidablePredicate(m));
    match p {
        ScenePredicate::EntityExists { entity } | ScenePredicate::EntityAbsent { entity } if entity.category.is_empty() && entity.id.is_none() => {
            bad("entity reference without category or id".into())
        }
        ScenePredicate::LightingInRange { min, max } | ScenePredicate::ColorTemperatureInRange { min, max }
            if !(min.0.is_finite() && max.0.is_finite() && min.0 <= max.0) =>
        {
            bad(format!("empty or non-finite range [{}, {}]", min.0, max.0))
        }
        ScenePredicate::CameraCount { min, max } if min > max => bad(format!("empty camera range [{min}, {max}]")),
        _ => Ok(()),
    }
}

fn in_range(value: f64, min: f64, max: f64) -> bool {
    let v = micro(value);
    micro(min) <= v && v <= micro(max)
}

/// Truth of a scene predicate in a concrete scene.
pub fn scene_predicate_holds(scene: &SceneState, p: &ScenePredicate) -> bool {
    let exists = |r| scene.entities.iter().any(|e| ref_matches(scene, &e.id, r));
    match p {
        ScenePredicate::EntityExists { entity } => exists(entity),
        ScenePredicate::EntityAbsent { entity } => !exists(entity),
        ScenePredicate::RelationHolds { subject, predicate, object } => relation_holds(scene, subject, *predicate, object),
        ScenePredicate::RelationAbsent { subject, predicate, object } => !relation_holds(scene, subject, *predicate, object),
        ScenePredicate::RobotIs { model } => scene.robot.as_ref().is_some_and(|r| &r.model == model),
        ScenePredicate::LightingInRange { min, max } => in_range(scene.lighting.intensity, min.0, max.0),
        ScenePredicate::ColorTemperatureInRange { min, max } => in_range(scene.lighting.color_temperature, min.0, max.0),
        ScenePredicate::CameraPresent { id, fov } => scene
            .camera(id)
            .is_some_and(|c| fov.map_or(true, |f| micro(c.fov_deg) == micro(f.0))),
        ScenePredicate::CameraAbsent { id } => scene.camera(id).is_none(),
        ScenePredicate::CameraCount { min, max } => (*min as usize..=*max as usize).contains(&scene.cameras.len()),
        ScenePredicate::AssetAvailable { category } => asset_available(scene, category),
    }
}

/// Truth of a scene predicate in an abstract state.
pub fn abstract_predicate_holds(s: &AbstractState, p: &ScenePredicate) -> bool {
    let rel = |subj, pred, obj| s.relations.iter().any(|(a, q, b)| *q == pred && s.matches(a, subj) && s.matches(b, obj));
    let micro_in = |v: i64, min: f64, max: f64| micro(min) <= v && v <= micro(max);
    match p {
        ScenePredicate::EntityExists { entity } => s.matching(entity).next().is_some(),
        ScenePredicate::EntityAbsent { entity } => s.matching(entity).next().is_none(),
        ScenePredicate::RelationHolds { subject, predicate, object } => rel(subject, *predicate, object),
        ScenePredicate::RelationAbsent { subject, predicate, object } => !rel(subject, *predicate, object),
        ScenePredicate::RobotIs { model } => s.robot.as_ref() == Some(model),
        ScenePredicate::LightingInRange { min, max } => micro_in(s.lighting, min.0, max.0),
        ScenePredicate::ColorTemperatureInRange { min, max } => micro_in(s.color_temperature, min.0, max.0),
        ScenePredicate::CameraPresent { id, fov } => {
            s.cameras.get(id).is_some_and(|f| fov.map_or(true, |want| *f == micro(want.0)))
        }
        ScenePredicate::CameraAbsent { id } => !s.cameras.contains_key(id),
        ScenePredicate::CameraCount { min, max } => (*min as usize..=*max as usize).contains(&s.cameras.len()),
        ScenePredicate::AssetAvailable { category } => s.asset_categories.contains(category),
    }
}

/// `(Δgoal, Δpres)`. Preservation is measured only against a baseline.
pub fn scene_deviation(
    scene: &SceneState,
    goal: &GoalSpec,
    baseline: Option<&SceneState>,
) -> Result<(f64, f64), DeviationError> {
    for p in &goal.scene_goals {
        check_decidable(p)?;
    }
    let unsatisfied = goal.scene_goals.iter().filter(|p| !scene_predicate_holds(scene, p)).count();
    let d_goal = fraction(unsatisfied, goal.scene_goals.len());
    let d_pres = match baseline {
        None => 0.0,
        Some(base) => {
            let changed = goal.preserve_scope.iter().filter(|path| scene.path_value(path) != base.path_value(path)).count();
            fraction(changed, goal.preserve_scope.len())
        }
    };
    Ok((d_goal, d_pres))
}

fn task_term(successes: u64, goals: &DataGoals) -> f64 {
    if goals.min_episodes == 0 {
        return 0.0;
    }
    let n = goals.min_episodes;
    clip01(n.saturating_sub(successes) as f64 / n as f64)
}

fn stab_term(cv: f64, goals: &DataGoals) -> f64 {
    match goals.stability_threshold {
        Some(t) if cv <= t.0 => 0.0,
        _ => clip01(cv),
    }
}

/// `(Δtask, Δstab, Δfmt)` for the goal's task. A required format with no
/// manifest, or whose manifest does not cover exactly the task's
/// successful episodes, contributes 1; otherwise it contributes its
/// validation violation ratio. Δfmt is the mean over required formats.
pub fn data_deviation(data: &DataState, goal: &GoalSpec) -> (f64, f64, f64) {
    let Some(g) = &goal.data_goals else { return (0.0, 0.0, 0.0) };
    let mut stats = EpisodeStats::default();
    for e in data.episodes_of(&g.task) {
        stats.add(e.length, e.success, 1);
    }
    let mut successful: Vec<&str> = data.episodes_of(&g.task).filter(|e| e.success).map(|e| e.id.as_str()).collect();
    successful.sort();
    let fmt = if g.formats.is_empty() {
        0.0
    } else {
        let per: f64 = g
            .formats
            .iter()
            .map(|f| match data.exports.get(f) {
                None => 1.0,
                Some(m) => {
                    let mut covered: Vec<&str> = m.episode_ids.iter().map(String::as_str).collect();
                    covered.sort();
                    if covered != successful {
                        1.0
                    } else {
                        validate_format(m).ratio()
                    }
                }
            })
            .sum();
        per / g.formats.len() as f64
    };
    (task_term(stats.successes, g), stab_term(stats.length_cv(), g), clip01(fmt))
}

fn res_term(used: f64, goals: &ModelGoals) -> f64 {
    match goals.resource_budget {
        Some(b) if b.0 > 0.0 => clip01((used - goals.resource_baseline.0 - b.0) / b.0),
        _ => 0.0,
    }
}

fn train_term(achieved: Option<f64>, target: f64) -> f64 {
    match achieved {
        Some(a) if target > 0.0 => clip01((a - target) / target),
        _ => 1.0,
    }
}

/// `(Δcode, Δtrain, Δeval, Δres)`.
pub fn model_deviation(model: &ModelState, goal: &GoalSpec) -> (f64, f64, f64, f64) {
    let Some(g) = &goal.model_goals else { return (0.0, 0.0, 0.0, 0.0) };
    let invalid = g
        .code_assets
        .iter()
        .filter(|id| !model.code_assets.iter().any(|c| &c.id == *id && c.status == crate::state::ValidationStatus::Valid))
        .count();
    let train = match &g.training {
        None => 0.0,
        Some(t) => {
            let achieved = model
                .latest_checkpoint(&t.model)
                .filter(|c| c.parent_dataset == t.dataset)
                .and_then(|c| c.metrics.get("loss").copied());
            train_term(achieved, t.target_metric.0)
        }
    };
    let missing = g.reports.iter().filter(|p| !model.report(&p.model, &p.benchmark).is_some_and(|r| r.episode_count > 0)).count();
    (
        fraction(invalid, g.code_assets.len()),
        train,
        fraction(missing, g.reports.len()),
        res_term(model.resource_units(), g),
    )
}

pub fn total_deviation(
    ctx: &OperationalContext,
    goal: &GoalSpec,
    baseline: Option<&SceneState>,
    w: DeviationWeights,
) -> Result<DeviationReport, DeviationError> {
    let (goal_t, pres) = scene_deviation(&ctx.scene, goal, baseline)?;
    let (task, stab, fmt) = data_deviation(&ctx.data, goal);
    let (code, train, eval, res) = model_deviation(&ctx.model, goal);
    Ok(DeviationReport::new(DeviationTerms { goal: goal_t, pres, task, stab, fmt, code, train, eval, res }, w))
}

/// Deviation predicted for an abstract state. Preservation is predicted
/// from the baseline paths the plan has written.
pub fn abstract_deviation(s: &AbstractState, goal: &GoalSpec, w: DeviationWeights) -> DeviationReport {
    let unsatisfied = goal.scene_goals.iter().filter(|p| !abstract_predicate_holds(s, p)).count();
    let mut t = DeviationTerms {
        goal: fraction(unsatisfied, goal.scene_goals.len()),
        pres: fraction(goal.preserve_scope.iter().filter(|p| s.touched.contains(*p)).count(), goal.preserve_scope.len()),
        ..DeviationTerms::default()
    };
    if let Some(g) = &goal.data_goals {
        let stats = s.episodes.get(&g.task).copied().unwrap_or_default();
        t.task = task_term(stats.successes, g);
        t.stab = stab_term(stats.length_cv(), g);
        if !g.formats.is_empty() {
            let stale = g
                .formats
                .iter()
                .filter(|f| match s.exports.get(f) {
                    None => true,
                    Some((task, n)) => !(*n == stats.successes && (*n == 0 || task == &g.task)),
                })
                .count();
            t.fmt = fraction(stale, g.formats.len());
        }
    }
    if let Some(g) = &goal.model_goals {
        t.code = fraction(g.code_assets.iter().filter(|id| s.code.get(*id) != Some(&true)).count(), g.code_assets.len());
        if let Some(tr) = &g.training {
            let achieved = s
                .trained
                .get(&tr.model)
                .filter(|(d, _)| d == &tr.dataset)
                .map(|(_, m)| *m as f64 / MICRO);
            t.train = train_term(achieved, tr.target_metric.0);
        }
        let missing = g.reports.iter().filter(|p| !s.reports.contains(&(p.model.clone(), p.benchmark.clone()))).count();
        t.eval = fraction(missing, g.reports.len());
        t.res = res_term(s.resources as f64 / MICRO, g);
    }
    DeviationReport::new(t, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum() {
        let t = DeviationTerms { goal: 0.5, pres: 0.5, task: 0.1, stab: 0.2, fmt: 0.3, code: 0.0, train: 1.0, eval: 0.5, res: 0.25 };
        let w = DeviationWeights { rho: 2.0, eta: 1.0, kappa: 0.5, mu: 1.0, nu: 2.0, xi: 4.0 };
        let r = DeviationReport::new(t, w);
        let expected = 0.5 + 2.0 * 0.5 + 0.1 + 0.2 + 0.5 * 0.3 + 0.0 + 1.0 + 2.0 * 0.5 + 4.0 * 0.25;
        assert!((r.total - expected).abs() < 1e-12);
    }

    #[test]
    fn clip_handles_nan() {
        assert_eq!(clip01(f64::NAN), 1.0);
        assert_eq!(clip01(-3.0), 0.0);
    }
}
