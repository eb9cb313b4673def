use std::time::Instant;

use claw_core::adapters::AssetLibrary;
use claw_core::intent::{EntityRef, GoalSpec, IntentClass, IntentRepresentation, ScenePredicate};
use claw_core::planner::{dry_run, estimate_cost, evaluate_sequence, plan, search, AbstractState, CostModel, PlannerError};
use claw_core::skills::SkillLibrary;
use claw_core::state::OperationalContext;
use claw_core::testkit::{brute_force_optimum, random_planner_instance};

#[test]
fn search_matches_exhaustive_oracle() {
    let started = Instant::now();
    let mut nontrivial = 0;
    for seed in 0..50 {
        let inst = random_planner_instance(seed, 6, 4);
        let (oracle_j, _) = brute_force_optimum(&inst);
        let (calls, j) = match search(&inst.start, &inst.goal, &inst.hints, &inst.lib, &inst.cost, None) {
            Ok((calls, b)) => (calls, b.objective),
            // No candidate moves at all: the only plan is the empty one.
            Err(PlannerError::NoApplicableSkills) => {
                (vec![], evaluate_sequence(&inst.start, &[], &inst.goal, &inst.lib, &inst.cost).unwrap().0.objective)
            }
            Err(e) => panic!("seed {seed}: {e}"),
        };
        assert!((j - oracle_j).abs() < 1e-9, "seed {seed}: search J {j} vs oracle {oracle_j}\n{calls:#?}");
        if !calls.is_empty() {
            nontrivial += 1;
        }
    }
    assert!(nontrivial >= 15, "only {nontrivial} instances needed a plan");
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

fn intent(class: IntentClass) -> IntentRepresentation {
    IntentRepresentation::new(class)
}

fn goal_of(preds: Vec<ScenePredicate>) -> GoalSpec {
    GoalSpec { scene_goals: preds.into_iter().collect(), ..GoalSpec::default() }
}

#[test]
fn prefers_cheaper_signature_equivalent() {
    let ctx = OperationalContext::empty("s");
    let assets = AssetLibrary::builtin();
    let goal = goal_of(vec![ScenePredicate::EntityExists { entity: EntityRef::category("mug") }]);
    let wf = plan(&intent(IntentClass::CreateScene), &goal, &ctx, &SkillLibrary::builtin(), &assets, &CostModel::default()).unwrap();
    assert_eq!(wf.calls.len(), 1);
    assert_eq!(wf.calls[0].skill_id, "add_entity");
    assert_eq!(wf.predicted.deviation, 0.0);
    assert_eq!(wf.predicted.objective, 1.0);
}

#[test]
fn satisfied_goal_plans_nothing() {
    let mut ctx = OperationalContext::empty("s");
    claw_core::testkit::add_entity(&mut ctx, "mug");
    let assets = AssetLibrary::builtin();
    let goal = goal_of(vec![ScenePredicate::EntityExists { entity: EntityRef::category("mug") }]);
    let wf = plan(&intent(IntentClass::CreateScene), &goal, &ctx, &SkillLibrary::builtin(), &assets, &CostModel::default()).unwrap();
    assert!(wf.is_empty());
    assert_eq!(wf.predicted.objective, 0.0);
}

#[test]
fn no_applicable_skills() {
    let ctx = OperationalContext::empty("s");
    let assets = AssetLibrary::builtin();
    let lib = SkillLibrary::builtin().restricted_to(&["set_lighting"]);
    let goal = goal_of(vec![ScenePredicate::EntityExists { entity: EntityRef::category("mug") }]);
    let err = plan(&intent(IntentClass::CreateScene), &goal, &ctx, &lib, &assets, &CostModel::default()).unwrap_err();
    assert_eq!(err, PlannerError::NoApplicableSkills);
}

#[test]
fn expansion_budget_is_enforced() {
    let ctx = OperationalContext::empty("s");
    let assets = AssetLibrary::builtin();
    let preds = ["mug", "bowl", "plate", "cube", "apple", "banana"]
        .iter()
        .map(|c| ScenePredicate::EntityExists { entity: EntityRef::category(*c) })
        .collect();
    let cost = CostModel { max_expansions: 3, ..CostModel::default() };
    let err = plan(&intent(IntentClass::CreateScene), &goal_of(preds), &ctx, &SkillLibrary::builtin(), &assets, &cost).unwrap_err();
    assert_eq!(err, PlannerError::PlanningBudgetExceeded(3));
}

#[test]
fn invalid_cost_model_rejected() {
    let ctx = OperationalContext::empty("s");
    let assets = AssetLibrary::builtin();
    let cost = CostModel { lambda: -1.0, ..CostModel::default() };
    let err = plan(&intent(IntentClass::CreateScene), &GoalSpec::default(), &ctx, &SkillLibrary::builtin(), &assets, &cost).unwrap_err();
    assert!(matches!(err, PlannerError::InvalidCostModel(_)));
}

#[test]
fn estimate_matches_prediction_and_plans_are_deterministic() {
    for seed in 0..20 {
        let inst = random_planner_instance(seed, 6, 4);
        let a = search(&inst.start, &inst.goal, &inst.hints, &inst.lib, &inst.cost, None);
        let b = search(&inst.start, &inst.goal, &inst.hints, &inst.lib, &inst.cost, None);
        assert_eq!(a, b);
    }
    let ctx = OperationalContext::empty("s");
    let assets = AssetLibrary::builtin();
    let goal = goal_of(vec![
        ScenePredicate::EntityExists { entity: EntityRef::category("mug") },
        ScenePredicate::EntityExists { entity: EntityRef::category("table") },
        ScenePredicate::RelationHolds {
            subject: EntityRef::category("mug"),
            predicate: claw_core::state::SpatialPredicate::On,
            object: EntityRef::category("table"),
        },
    ]);
    let lib = SkillLibrary::builtin();
    let wf = plan(&intent(IntentClass::CreateScene), &goal, &ctx, &lib, &assets, &CostModel::default()).unwrap();
    let start = AbstractState::from_context(&ctx, &assets);
    let est = estimate_cost(&wf, &start, &lib, &CostModel::default()).unwrap();
    assert_eq!(est, wf.predicted);
    assert_eq!(wf.calls.iter().map(|c| c.skill_id.as_str()).collect::<Vec<_>>(), ["add_entity", "add_entity", "set_relation"]);

    let dr = dry_run(&wf, &start, &lib, &CostModel::default()).unwrap();
    assert_eq!(dr.steps.len(), 3);
    assert_eq!(dr.steps[2].deviation_after, 0.0);
    assert!(dr.steps[0].delta.iter().any(|d| d.contains("+entity")));
}
