use claw_core::adapters::{AssetLibrary, BackendSet};
use claw_core::executor::{execute, ExecEnv, FinalStatus, RecoveryPolicy};
use claw_core::intent::{parse_intent, DialogueContext, RejectingBackend, UserTurn};
use claw_core::planner::{plan, CostModel};
use claw_core::skills::SkillLibrary;
use claw_core::state::{OperationalContext, SnapshotStore};

fn run(commands: &[&str]) -> OperationalContext {
    let dir = tempfile::tempdir().unwrap();
    let lib = SkillLibrary::builtin();
    let mut assets = AssetLibrary::builtin();
    let mut backends = BackendSet::mock(dir.path().join("exports"));
    let store = SnapshotStore::in_memory();
    let cost = CostModel::default();
    let mut ctx = OperationalContext::empty("s0");
    for text in commands {
        let intent = parse_intent(&UserTurn::text(*text), &DialogueContext::default(), &ctx, &assets, &RejectingBackend)
            .unwrap_or_else(|e| panic!("{text}: {e}"));
        let wf = plan(&intent, &intent.goal, &ctx, &lib, &assets, &cost).unwrap_or_else(|e| panic!("{text}: {e}"));
        assert!(!wf.is_empty(), "{text}: empty plan");
        let env = ExecEnv {
            backends: &mut backends,
            lib: &lib,
            assets: &mut assets,
            store: &store,
            policy: RecoveryPolicy::default(),
            cost,
            seed: 7,
        };
        let (next, trace) = execute(&wf, ctx, env, &mut |_| {}).unwrap_or_else(|e| panic!("{text}: {e}"));
        assert_eq!(trace.status, FinalStatus::Completed, "{text}: {:#?}", trace.records);
        let d = trace.deviation.as_ref().unwrap();
        assert!(d.total < 1e-9, "{text}: residual deviation {:?}", d.terms);
        ctx = next;
    }
    ctx
}

#[test]
fn scene_data_model_round() {
    let ctx = run(&[
        "CREATE scene WITH table, mug ON table",
        "EDIT scene SET robot=franka",
        "COLLECT 5 episodes OF pick_mug EXPORT episode-folder, hierarchical-container",
        "TRAIN act ON pick_mug TARGET 0.1",
        "EVALUATE act ON libero EPISODES 10",
    ]);
    assert_eq!(ctx.scene.entities.len(), 2);
    assert!(ctx.data.episodes.len() >= 5);
    assert_eq!(ctx.model.eval_reports.len(), 1);
}
