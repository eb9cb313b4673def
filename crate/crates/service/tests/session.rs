use std::sync::Arc;

use claw_core::adapters::{AssetLibrary, FaultInjector, FaultMode};
use claw_core::executor::FinalStatus;
use claw_core::intent::UserTurn;
use claw_core::state::SnapshotId;
use claw_service::events::{parse_log, replay};
use claw_service::{replay_file, EventKind, ReplayError, Service, SessionConfig, SessionError};

fn service() -> (tempfile::TempDir, Arc<Service>) {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(Service::open(dir.path(), 11).unwrap());
    (dir, svc)
}

fn turn(text: &str) -> UserTurn {
    UserTurn::text(text)
}

#[test]
fn create_turn_proposes_without_executing() {
    let (_d, svc) = service();
    let h = svc.create_session(None).unwrap();
    let before = h.state().head;
    let out = h.turn(turn("CREATE scene WITH mug")).unwrap();
    assert!((1..=2).contains(&out.workflow.calls.len()));
    assert_eq!(out.objective.deviation, 0.0);
    assert_eq!(h.state().head, before, "a turn must not touch the context");
    let kinds: Vec<_> = h.feed().since(0).iter().map(|e| e.kind.name()).collect();
    assert_eq!(kinds, ["session_created", "turn_received", "plan_proposed"]);
}

#[test]
fn approval_gate_precedes_every_step() {
    let (_d, svc) = service();
    let h = svc.create_session(None).unwrap();
    for cmd in ["CREATE scene WITH table, mug ON table", "EDIT scene SET lighting=0.4 PRESERVE all EXCEPT lighting"] {
        let out = h.turn(turn(cmd)).unwrap();
        h.approve(&out.plan_id).unwrap();
    }
    let mut approved = std::collections::BTreeSet::new();
    for e in h.feed().since(0) {
        match e.kind {
            EventKind::PlanApproved { plan_id, attention_units } => {
                assert_eq!(attention_units, 1.0);
                approved.insert(plan_id);
            }
            EventKind::StepCompleted { plan_id, .. } => assert!(approved.contains(&plan_id), "step before approval"),
            _ => {}
        }
    }
    assert_eq!(h.state().attention_units, 2.0);
}

#[test]
fn approve_streams_steps_in_order_and_ends_with_deviation() {
    let (_d, svc) = service();
    let h = svc.create_session(None).unwrap();
    let out = h.turn(turn("CREATE scene WITH table, mug ON table")).unwrap();
    let trace = h.approve(&out.plan_id).unwrap();
    let events = h.feed().since(0);
    let steps: Vec<_> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::StepCompleted { record, .. } => Some(record.index),
            _ => None,
        })
        .collect();
    assert_eq!(steps, (0..trace.records.len()).collect::<Vec<_>>());
    match &events.last().unwrap().kind {
        EventKind::WorkflowFinished { deviation: Some(d), status, .. } => {
            assert_eq!(*status, FinalStatus::Completed);
            assert_eq!(d.total, 0.0);
        }
        other => panic!("last event {other:?}"),
    }
}

#[test]
fn second_approval_is_already_executed() {
    let (_d, svc) = service();
    let h = svc.create_session(None).unwrap();
    let out = h.turn(turn("CREATE scene WITH mug")).unwrap();
    h.approve(&out.plan_id).unwrap();
    assert!(matches!(h.approve(&out.plan_id), Err(SessionError::AlreadyExecuted(_))));
    assert!(matches!(h.approve("p9999"), Err(SessionError::UnknownPlan(_))));
}

#[test]
fn approval_after_rollback_is_stale() {
    let (_d, svc) = service();
    let h = svc.create_session(None).unwrap();
    let start = h.state().head;
    let first = h.turn(turn("CREATE scene WITH mug")).unwrap();
    h.approve(&first.plan_id).unwrap();
    let pending = h.turn(turn("EDIT scene SET lighting=0.2 PRESERVE all EXCEPT lighting")).unwrap();
    h.rollback(&start).unwrap();
    assert!(h.state().context.scene.entities.is_empty());
    assert!(matches!(h.approve(&pending.plan_id), Err(SessionError::StalePlan { .. })));
    assert!(matches!(h.rollback(&SnapshotId("00".into())), Err(SessionError::UnknownSnapshot(_))));
}

#[test]
fn mutations_while_held_are_busy() {
    let (_d, svc) = service();
    let h = svc.create_session(None).unwrap();
    let guard = h.lock().unwrap();
    assert!(matches!(h.turn(turn("CREATE scene WITH mug")), Err(SessionError::Busy)));
    assert!(matches!(h.approve("p0001"), Err(SessionError::Busy)));
    // Readers still get the last published state.
    assert_eq!(h.state().session_id, guard.id());
}

#[test]
fn rejected_turn_is_logged_with_hint() {
    let (_d, svc) = service();
    let h = svc.create_session(None).unwrap();
    match h.turn(turn("please build me a kitchen")) {
        Err(SessionError::Intent(claw_core::intent::IntentError::UnparsableIntent { hint, .. })) => assert!(!hint.is_empty()),
        other => panic!("{other:?}"),
    }
    let last = h.feed().since(0).pop().unwrap();
    assert!(matches!(last.kind, EventKind::TurnRejected { ref code, .. } if code == "unparsable-intent"));
}

#[test]
fn same_state_and_turn_give_same_plan() {
    let (_d, svc) = service();
    let a = svc.create_session(None).unwrap();
    let b = svc.create_session(None).unwrap();
    let cmd = "CREATE scene WITH plate, cube ON plate SET lighting=0.6";
    let pa = a.turn(turn(cmd)).unwrap();
    let pb = b.turn(turn(cmd)).unwrap();
    assert_eq!(pa.workflow, pb.workflow);
}

fn scripted(svc: &Service, config: Option<SessionConfig>) -> Arc<claw_service::SessionHandle> {
    let h = svc.create_session(config).unwrap();
    for cmd in [
        "CREATE scene WITH table, mug ON table",
        "COLLECT 4 episodes OF pick_mug EXPORT sequential-record",
        "TRAIN act ON pick_mug",
        "EVALUATE act ON libero EPISODES 5",
    ] {
        let out = h.turn(turn(cmd)).unwrap();
        h.approve(&out.plan_id).unwrap();
    }
    h
}

#[test]
fn replay_reproduces_head_and_is_repeatable() {
    let (dir, svc) = service();
    let h = scripted(&svc, None);
    let head = h.state().head;
    let log = svc.session_dir("s0001").join("events.jsonl");
    let a = replay_file(&log, dir.path()).unwrap();
    let b = replay_file(&log, dir.path()).unwrap();
    assert_eq!(a.head, head);
    assert_eq!(a.recorded_head, head);
    assert_eq!(a.ctx, b.ctx);
}

#[test]
fn replay_with_rollbacks_and_faults() {
    let (dir, svc) = service();
    let faults = FaultInjector::new(3).with_rate("set-relation", 0.5, FaultMode::CorruptWrite);
    let config = SessionConfig { faults: Some(faults), ..SessionConfig::seeded(3) };
    let h = svc.create_session(Some(config)).unwrap();
    let start = h.state().head;
    for cmd in ["CREATE scene WITH table, mug ON table, bowl NEAR table", "EDIT scene REMOVE bowl"] {
        let out = h.turn(turn(cmd)).unwrap();
        h.approve(&out.plan_id).unwrap();
    }
    h.rollback(&start).unwrap();
    let log = svc.session_dir(h.state().session_id.as_str()).join("events.jsonl");
    let out = replay_file(&log, dir.path()).unwrap();
    assert_eq!(out.head, start);
    assert_eq!(out.head, h.state().head);
}

#[test]
fn truncated_log_is_corrupt_at_the_torn_line() {
    let (_d, svc) = service();
    scripted(&svc, None);
    let bytes = std::fs::read(svc.session_dir("s0001").join("events.jsonl")).unwrap();
    let events = parse_log(&bytes).unwrap();
    let (offset, _) = events.iter().find(|(_, e)| matches!(e.kind, EventKind::StepCompleted { .. })).unwrap();
    let cut = *offset as usize + 20;
    match parse_log(&bytes[..cut]) {
        Err(ReplayError::CorruptLog { offset: at, .. }) => assert_eq!(at, *offset),
        other => panic!("{other:?}"),
    }
    let mut garbled = bytes.clone();
    garbled[*offset as usize + 2] = b'#';
    assert!(matches!(parse_log(&garbled), Err(ReplayError::CorruptLog { offset: at, .. }) if at == *offset));
}

#[test]
fn tampered_step_hash_is_caught() {
    let (_d, svc) = service();
    scripted(&svc, None);
    let text = std::fs::read_to_string(svc.session_dir("s0001").join("events.jsonl")).unwrap();
    let mut events = parse_log(text.as_bytes()).unwrap();
    let victim = events.iter().position(|(_, e)| matches!(e.kind, EventKind::StepCompleted { .. })).unwrap();
    if let EventKind::StepCompleted { record, .. } = &mut events[victim].1.kind {
        record.post = Some(SnapshotId("f".repeat(64)));
    }
    let err = replay(&events, &mut AssetLibrary::builtin()).unwrap_err();
    assert!(matches!(err, ReplayError::CorruptLog { offset, .. } if offset == events[victim].0));
}

#[test]
fn reopened_session_continues() {
    let dir = tempfile::tempdir().unwrap();
    let head = {
        let svc = Service::open(dir.path(), 0).unwrap();
        scripted(&svc, None).state().head
    };
    let svc = Service::open(dir.path(), 0).unwrap();
    let h = svc.session("s0001").unwrap();
    let st = h.state();
    assert_eq!(st.head, head);
    assert_eq!(st.attention_units, 4.0);
    let out = h.turn(turn("EDIT scene SET lighting=0.9 PRESERVE all EXCEPT lighting")).unwrap();
    h.approve(&out.plan_id).unwrap();
    let again = replay_file(&svc.session_dir("s0001").join("events.jsonl"), dir.path()).unwrap();
    assert_eq!(again.head, h.state().head);
    assert!(matches!(svc.session("../etc"), Err(SessionError::UnknownSession(_))));
    assert_eq!(svc.create_session(None).unwrap().state().session_id, "s0002");
}

#[test]
fn ingested_assets_reach_new_sessions() {
    let (_d, svc) = service();
    let rec = svc.ingest_asset(&claw_core::adapters::SourceDescriptor::Catalog { category: "teapot".into() }).unwrap();
    let again = svc.ingest_asset(&claw_core::adapters::SourceDescriptor::Catalog { category: "teapot".into() }).unwrap();
    assert_eq!(rec.id, again.id);
    let h = svc.create_session(None).unwrap();
    let out = h.turn(turn("CREATE scene WITH teapot ON table")).unwrap();
    let trace = h.approve(&out.plan_id).unwrap();
    assert_eq!(trace.status, FinalStatus::Completed);
}

#[test]
fn failed_execution_replays_to_the_plan_start() {
    let (_d, svc) = service();
    let h = svc.create_session(None).unwrap();
    let first = h.turn(turn("CREATE scene WITH mug")).unwrap();
    h.approve(&first.plan_id).unwrap();
    let before = h.state().head;
    let second = h.turn(turn("CREATE scene WITH table, bowl")).unwrap();
    h.approve(&second.plan_id).unwrap();
    let bytes = std::fs::read(svc.session_dir("s0001").join("events.jsonl")).unwrap();
    let mut events = parse_log(&bytes).unwrap();
    let (_, last) = events.last_mut().unwrap();
    assert!(matches!(last.kind, EventKind::WorkflowFinished { .. }));
    last.kind = EventKind::ExecutionFailed { plan_id: second.plan_id.clone(), message: "backend lost".into() };
    let out = replay(&events, &mut AssetLibrary::builtin()).unwrap();
    assert_eq!(out.head, before);
    assert_eq!(out.ctx.scene.entities.len(), 1);
}
