use claw_core::adapters::{AssetLibrary, BackendSet, FaultInjector, FaultMode};
use claw_core::executor::{execute, verify_step, ExecEnv, ExecError, ExecutionTrace, FinalStatus, RecoveryKind, RecoveryPolicy};
use claw_core::intent::{EntityRef, GoalSpec, IntentClass, IntentRepresentation, ScenePredicate};
use claw_core::planner::{plan, CostModel, Workflow};
use claw_core::skills::{Postcondition, SkillCall, SkillLibrary};
use claw_core::state::{canonical_serialize, validate_context, OperationalContext, SnapshotStore, SpatialPredicate};
use claw_core::testkit::{add_entity, random_planner_instance};

const SCENE_BINDINGS: &[&str] = &[
    "spawn-asset",
    "spawn-asset-staged",
    "remove-entity",
    "set-relation",
    "clear-relation",
    "set-lighting",
    "set-camera",
    "remove-camera",
    "set-robot",
];

struct Rig {
    lib: SkillLibrary,
    assets: AssetLibrary,
    backends: BackendSet,
    store: SnapshotStore,
    cost: CostModel,
    _dir: tempfile::TempDir,
}

impl Rig {
    fn new(lib: SkillLibrary, faults: FaultInjector) -> Rig {
        let dir = tempfile::tempdir().unwrap();
        Rig {
            lib,
            assets: AssetLibrary::builtin(),
            backends: BackendSet::mock(dir.path().join("exports")).with_faults(faults),
            store: SnapshotStore::in_memory(),
            cost: CostModel::default(),
            _dir: dir,
        }
    }

    fn plan(&self, goal: &GoalSpec, ctx: &OperationalContext) -> Workflow {
        plan(&IntentRepresentation::new(IntentClass::CreateScene), goal, ctx, &self.lib, &self.assets, &self.cost).unwrap()
    }

    fn run(&mut self, wf: &Workflow, ctx: OperationalContext, seed: u64) -> Result<(OperationalContext, ExecutionTrace), ExecError> {
        let env = ExecEnv {
            backends: &mut self.backends,
            lib: &self.lib,
            assets: &mut self.assets,
            store: &self.store,
            policy: RecoveryPolicy::default(),
            cost: self.cost,
            seed,
        };
        execute(wf, ctx, env, &mut |_| {})
    }
}

fn exists(c: &str) -> ScenePredicate {
    ScenePredicate::EntityExists { entity: EntityRef::category(c) }
}

fn goal_of(preds: impl IntoIterator<Item = ScenePredicate>) -> GoalSpec {
    GoalSpec { scene_goals: preds.into_iter().collect(), ..GoalSpec::default() }
}

fn trace_of(r: Result<(OperationalContext, ExecutionTrace), ExecError>) -> (OperationalContext, ExecutionTrace) {
    match r {
        Ok(v) => v,
        Err(ExecError::AbortedWorkflow { ctx, trace }) => (*ctx, *trace),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn rollback_restores_pre_step_bytes() {
    let mut rollbacks = 0;
    for seed in 0..200u64 {
        let inst = random_planner_instance(seed, 6, 4);
        let mut faults = FaultInjector::new(seed);
        for b in SCENE_BINDINGS {
            faults = faults.with_rate(b, 0.3, FaultMode::CorruptWrite);
        }
        let mut rig = Rig::new(SkillLibrary::builtin(), faults);
        rig.cost.lambda = 100.0;
        let wf = rig.plan(&inst.goal, &inst.ctx);
        let (end, trace) = trace_of(rig.run(&wf, inst.ctx.clone(), seed));
        for (k, r) in trace.records.iter().enumerate() {
            if !r.verdict.rollback {
                continue;
            }
            rollbacks += 1;
            assert_eq!(r.rolled_back_to.as_ref(), Some(&r.pre), "seed {seed}");
            let restored = rig.store.restore(&r.pre).unwrap();
            assert_eq!(&canonical_serialize(&restored).unwrap()[..], &rig.store.bytes(&r.pre).unwrap()[..]);
            match trace.records.get(k + 1) {
                Some(next) => assert_eq!(next.pre, r.pre, "seed {seed}: step after rollback starts elsewhere"),
                None => assert_eq!(end.content_hash().unwrap(), r.pre),
            }
        }
        assert!(validate_context(&end).is_empty(), "seed {seed}");
    }
    assert!(rollbacks >= 50, "only {rollbacks} rollbacks exercised");
}

#[test]
fn substitute_recovers_flaky_spawn() {
    let cats = ["apple", "banana", "bottle", "bowl", "box", "cabinet", "cube", "laptop", "mug", "plate", "shelf", "sponge"];
    let goal = goal_of(cats.iter().map(|c| exists(c)));
    let ctx = OperationalContext::empty("s");
    let mut planner_rig = Rig::new(SkillLibrary::builtin(), FaultInjector::new(0));
    planner_rig.cost.lambda = 100.0;
    let wf = planner_rig.plan(&goal, &ctx);
    assert_eq!(wf.len(), 12);
    let mut after_recovery = 0;
    for seed in 0..100u64 {
        let faults = FaultInjector::new(seed).with_rate("spawn-asset", 0.3, FaultMode::ErrorBeforeMutation);
        let mut rig = Rig::new(SkillLibrary::builtin(), faults);
        rig.cost.lambda = 100.0;
        let (end, trace) = rig.run(&wf, ctx.clone(), seed).unwrap();
        assert!(validate_context(&end).is_empty());
        assert_eq!(trace.deviation.unwrap().total, 0.0);
        if trace.status == FinalStatus::CompletedAfterRecovery {
            after_recovery += 1;
            assert!(trace.records.iter().any(|r| r.recovery == RecoveryKind::Substitute));
        }
    }
    assert!(after_recovery >= 90, "{after_recovery}/100");
}

#[test]
fn clean_run_is_completed_and_deterministic() {
    let goal = goal_of([
        exists("mug"),
        exists("table"),
        ScenePredicate::RelationHolds {
            subject: EntityRef::category("mug"),
            predicate: SpatialPredicate::On,
            object: EntityRef::category("table"),
        },
    ]);
    let ctx = OperationalContext::empty("s");
    let mut traces = Vec::new();
    for _ in 0..2 {
        let mut rig = Rig::new(SkillLibrary::builtin(), FaultInjector::new(1));
        let wf = rig.plan(&goal, &ctx);
        let (end, trace) = rig.run(&wf, ctx.clone(), 9).unwrap();
        assert_eq!(trace.status, FinalStatus::Completed);
        assert!(trace.records.iter().all(|r| r.verdict.is_ok() && r.post.is_some()));
        assert_eq!(trace.head, end.content_hash().unwrap());
        let mug = end.scene.entities_of("mug").next().unwrap();
        assert!(mug.pose.position[2] > 0.7, "mug not raised onto the table");
        traces.push(trace.without_timing());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn stale_entity_id_is_repaired() {
    let mut ctx = OperationalContext::empty("s");
    add_entity(&mut ctx, "table");
    let mut rig = Rig::new(SkillLibrary::builtin(), FaultInjector::new(0));
    let mut params = claw_core::intent::Params::new();
    params.insert("entity".into(), claw_core::intent::ParamValue::Entity(EntityRef::id("table", "table_7")));
    let mut wf = rig.plan(&goal_of([]), &ctx);
    wf.goal = goal_of([ScenePredicate::EntityAbsent { entity: EntityRef::category("table") }]);
    wf.calls = vec![SkillCall::new("remove_entity", params)];
    let (end, trace) = rig.run(&wf, ctx, 0).unwrap();
    assert_eq!(trace.status, FinalStatus::CompletedAfterRecovery);
    assert_eq!(trace.records[0].recovery, RecoveryKind::Repair);
    assert_eq!(trace.records[0].verdict.code(), Some("entity-exists"));
    assert!(!trace.records[0].verdict.rollback);
    assert!(end.scene.entities.is_empty());
}

#[test]
fn replan_continues_after_failure_without_substitute() {
    let lib = SkillLibrary::builtin().restricted_to(&["add_entity"]);
    let faults = FaultInjector::new(0).fail_first("spawn-asset", 1, FaultMode::ErrorBeforeMutation);
    let mut rig = Rig::new(lib, faults);
    let ctx = OperationalContext::empty("s");
    let wf = rig.plan(&goal_of([exists("mug"), exists("table")]), &ctx);
    let (end, trace) = rig.run(&wf, ctx, 0).unwrap();
    assert_eq!(trace.status, FinalStatus::CompletedAfterRecovery);
    assert_eq!(trace.records[0].recovery, RecoveryKind::Replan);
    assert_eq!(trace.records.last().unwrap().attempt, 1);
    assert_eq!(end.scene.entities.len(), 2);
}

#[test]
fn persistent_failure_aborts_with_last_verified_context() {
    let faults = FaultInjector::new(0).always("set-relation", FaultMode::CorruptWrite);
    let mut rig = Rig::new(SkillLibrary::builtin(), faults);
    let ctx = OperationalContext::empty("s");
    let goal = goal_of([
        exists("mug"),
        exists("table"),
        ScenePredicate::RelationHolds {
            subject: EntityRef::category("mug"),
            predicate: SpatialPredicate::On,
            object: EntityRef::category("table"),
        },
    ]);
    let wf = rig.plan(&goal, &ctx);
    match rig.run(&wf, ctx, 0) {
        Err(ExecError::AbortedWorkflow { ctx, trace }) => {
            assert_eq!(trace.status, FinalStatus::Aborted);
            assert_eq!(trace.records.last().unwrap().recovery, RecoveryKind::Abort);
            assert_eq!(ctx.scene.entities.len(), 2);
            assert!(ctx.scene.relations.is_empty());
            assert!(validate_context(&ctx).is_empty());
            let d = trace.deviation.unwrap();
            assert!((d.terms.goal - 1.0 / 3.0).abs() < 1e-12);
        }
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn missing_backend_is_reported() {
    let mut rig = Rig::new(SkillLibrary::builtin(), FaultInjector::new(0));
    rig.backends = BackendSet::new(vec![]);
    let ctx = OperationalContext::empty("s");
    let wf = rig.plan(&goal_of([exists("mug")]), &ctx);
    assert!(matches!(rig.run(&wf, ctx, 0), Err(ExecError::BackendUnavailable(b)) if b == "spawn-asset"));
}

#[test]
fn verifier_flags_unmet_postcondition() {
    let ctx = OperationalContext::empty("s");
    let pre = ctx.content_hash().unwrap();
    let mut call = SkillCall::new("add_entity", Default::default());
    call.postconditions = vec![Postcondition::EntityCountAtLeast { category: "mug".into(), count: 1 }];
    let v = verify_step(&call, &ctx, &pre);
    assert_eq!(v.code(), Some("postcondition-failed"));
    assert!(!v.rollback);
    call.postconditions.clear();
    assert!(verify_step(&call, &ctx, &pre).is_ok());
}
