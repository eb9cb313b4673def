//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one `criterion N: PASS|FAIL` line; the process fails if any does.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use claw_core::adapters::{AssetLibrary, BackendSet, FaultInjector, FaultMode};
use claw_core::data::{export, import, read_manifest, validate_format, DataError, FormatId};
use claw_core::deviation::{data_deviation, scene_deviation, total_deviation, DeviationWeights};
use claw_core::executor::{execute, ExecEnv, ExecError, FinalStatus, RecoveryKind, RecoveryPolicy};
use claw_core::intent::{
    parse_intent, DataGoals, DialogueContext, EntityRef, GoalSpec, IntentClass, IntentRepresentation,
    ObservationDescriptor, RejectingBackend, ScenePredicate, UserTurn,
};
use claw_core::planner::{evaluate_sequence, plan, search, CostModel, PlannerError};
use claw_core::skills::SkillLibrary;
use claw_core::state::{canonical_serialize, validate_context, DataState, OperationalContext, SnapshotStore};
use claw_core::testkit::{
    add_entity, brute_force_optimum, corpus_context, random_episode_set, random_planner_instance, random_scene, rng,
};
use claw_service::{replay_file, Service, SessionConfig, SessionHandle};
use ordered_float::OrderedFloat;
use rand::Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut logs = Vec::new();
    let results: Vec<(u32, Outcome)> = vec![
        (1, planner_oracle()),
        (2, rollback_exactness()),
        (3, deviation_identity_and_sensitivity()),
        (4, format_round_trips()),
        (5, scenarios(&dir.path().join("scenarios"), &mut logs)),
        (6, recovery_liveness(&dir.path().join("liveness"), &mut logs)),
        (7, replay_determinism(&logs)),
        (8, intent_corpus()),
    ];
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n}: PASS {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL {why}");
            }
        }
    }
    println!("acceptance: {}/{} passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn planner_oracle() -> Outcome {
    let started = Instant::now();
    for seed in 0..50 {
        let inst = random_planner_instance(seed, 6, 4);
        let (oracle, _) = brute_force_optimum(&inst);
        let j = match search(&inst.start, &inst.goal, &inst.hints, &inst.lib, &inst.cost, None) {
            Ok((_, b)) => b.objective,
            Err(PlannerError::NoApplicableSkills) => {
                evaluate_sequence(&inst.start, &[], &inst.goal, &inst.lib, &inst.cost).map_err(|e| e.to_string())?.0.objective
            }
            Err(e) => return Err(format!("seed {seed}: {e}")),
        };
        ensure!(j == oracle, "seed {seed}: planner J {j} vs oracle {oracle}");
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!("50/50 instances match the oracle in {secs:.2}s"))
}

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

fn rollback_exactness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let lib = SkillLibrary::builtin();
    let mut rollbacks = 0;
    for seed in 0..200u64 {
        let inst = random_planner_instance(seed, 6, 4);
        let mut faults = FaultInjector::new(seed);
        for b in SCENE_BINDINGS {
            faults = faults.with_rate(b, 0.3, FaultMode::CorruptWrite);
        }
        let mut assets = AssetLibrary::builtin();
        let mut backends = BackendSet::mock(dir.path().join(seed.to_string())).with_faults(faults);
        let store = SnapshotStore::in_memory();
        let cost = CostModel { lambda: 100.0, ..CostModel::default() };
        let intent = IntentRepresentation::new(IntentClass::CreateScene);
        let wf = plan(&intent, &inst.goal, &inst.ctx, &lib, &assets, &cost).map_err(|e| format!("seed {seed}: {e}"))?;
        let env = ExecEnv { backends: &mut backends, lib: &lib, assets: &mut assets, store: &store, policy: RecoveryPolicy::default(), cost, seed };
        let (end, trace) = match execute(&wf, inst.ctx.clone(), env, &mut |_| {}) {
            Ok(v) => v,
            Err(ExecError::AbortedWorkflow { ctx, trace }) => (*ctx, *trace),
            Err(e) => return Err(format!("seed {seed}: {e}")),
        };
        for (k, r) in trace.records.iter().enumerate() {
            if !r.verdict.rollback {
                continue;
            }
            rollbacks += 1;
            ensure!(r.rolled_back_to.as_ref() == Some(&r.pre), "seed {seed} step {k}: rolled back elsewhere");
            let restored = store.restore(&r.pre).map_err(|e| e.to_string())?;
            let bytes = canonical_serialize(&restored).map_err(|e| e.to_string())?;
            ensure!(bytes[..] == store.bytes(&r.pre).ok_or("snapshot missing")?[..], "seed {seed} step {k}: bytes differ");
            let resumed_from = match trace.records.get(k + 1) {
                Some(next) => next.pre.clone(),
                None => end.content_hash().map_err(|e| e.to_string())?,
            };
            ensure!(resumed_from == r.pre, "seed {seed} step {k}: execution resumed from another state");
        }
        ensure!(validate_context(&end).is_empty(), "seed {seed}: final context invalid");
    }
    ensure!(rollbacks >= 50, "only {rollbacks} rollbacks exercised");
    Ok(format!("200 runs, {rollbacks} rollbacks, 0 violations"))
}

fn deviation_identity_and_sensitivity() -> Outcome {
    let err = |e: claw_core::deviation::DeviationError| e.to_string();
    let mut sensitivity_checks = 0;
    for seed in 0..20 {
        let mut ctx = random_scene(&mut rng(seed));
        if ctx.scene.entities.is_empty() {
            add_entity(&mut ctx, "mug");
        }
        let goals = satisfied(&ctx);
        let goal = GoalSpec {
            scene_goals: goals.clone(),
            preserve_scope: ctx.scene.field_paths().into_iter().collect(),
            ..GoalSpec::default()
        };
        let d = total_deviation(&ctx, &goal, Some(&ctx.scene), DeviationWeights::default()).map_err(err)?;
        ensure!(d.total == 0.0, "seed {seed}: d = {} on a satisfying context", d.total);
        let n = goals.len() as f64;
        for p in &goals {
            let Some(neg) = p.negation() else { continue };
            let mut g = goal.clone();
            g.scene_goals.remove(p);
            if !g.scene_goals.insert(neg) {
                continue;
            }
            let (d_goal, _) = scene_deviation(&ctx.scene, &g, None).map_err(err)?;
            ensure!(d_goal == 1.0 / n, "seed {seed}: violating {p:?} gives {d_goal}, want {}", 1.0 / n);
            sensitivity_checks += 1;
        }
    }
    for seed in 0..40 {
        let mut r = rng(seed);
        let mut base = random_scene(&mut r);
        if base.scene.entities.len() < 2 {
            add_entity(&mut base, "plate");
            add_entity(&mut base, "cube");
        }
        let target = base.scene.entities[r.gen_range(0..base.scene.entities.len())].id.clone();
        let target_path = format!("entities/{target}");
        let preserve: BTreeSet<String> = base.scene.field_paths().into_iter().filter(|p| *p != target_path).collect();
        let goal = GoalSpec { preserve_scope: preserve, mutable_scope: [target_path].into(), ..GoalSpec::default() };
        let mut edited = base.scene.clone();
        edited.entity_mut(&target).expect("target").pose.position[0] += 1.0;
        edited.touch();
        let in_scope = scene_deviation(&edited, &goal, Some(&base.scene)).map_err(err)?.1;
        ensure!(in_scope == 0.0, "seed {seed}: in-scope edit gives {in_scope}");
        edited.lighting.intensity = if edited.lighting.intensity > 0.5 { 0.1 } else { 0.9 };
        let out_of_scope = scene_deviation(&edited, &goal, Some(&base.scene)).map_err(err)?.1;
        ensure!(out_of_scope > 0.0, "seed {seed}: out-of-scope mutation unseen");
    }
    Ok(format!("20 identities, {sensitivity_checks} single violations, 40 preservation pairs"))
}

/// Scene predicates the context satisfies by construction.
fn satisfied(ctx: &OperationalContext) -> BTreeSet<ScenePredicate> {
    let scene = &ctx.scene;
    let mut out = BTreeSet::new();
    for e in &scene.entities {
        out.insert(ScenePredicate::EntityExists { entity: EntityRef::id(e.category.clone(), e.id.clone()) });
    }
    for c in ["mug", "table", "bowl", "plate", "cube"] {
        if scene.entities_of(c).next().is_none() {
            out.insert(ScenePredicate::EntityAbsent { entity: EntityRef::category(c) });
        }
    }
    for r in &scene.relations {
        let cat = |id: &str| scene.entity(id).map(|e| e.category.clone()).unwrap_or_default();
        out.insert(ScenePredicate::RelationHolds {
            subject: EntityRef::id(cat(&r.subject), r.subject.clone()),
            predicate: r.predicate,
            object: EntityRef::id(cat(&r.object), r.object.clone()),
        });
    }
    for c in &scene.cameras {
        out.insert(ScenePredicate::CameraPresent { id: c.id.clone(), fov: None });
    }
    let l = scene.lighting.intensity;
    out.insert(ScenePredicate::LightingInRange { min: OrderedFloat(l - 0.05), max: OrderedFloat(l + 0.05) });
    out
}

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let io = |e: std::io::Error| e.to_string();
    let data = |e: DataError| e.to_string();
    let (mut corrupted, mut detected) = (0, 0);
    for seed in 0..50 {
        let mut set = random_episode_set(seed);
        set.sort_by(|a, b| a.id.cmp(&b.id));
        let mut r = rng(seed ^ 0xC0FFEE);
        for f in FormatId::ALL {
            let dest = dir.path().join(format!("{seed}/{f}"));
            let m = export(&set, f, &dest).map_err(data)?;
            ensure!(validate_format(&m).is_clean(), "seed {seed} {f}: fresh export not clean");
            ensure!(import(&m).map_err(data)? == set, "seed {seed} {f}: import differs");
            ensure!(read_manifest(&dest).map_err(data)? == m, "seed {seed} {f}: manifest differs");

            let victim = &m.files[r.gen_range(0..m.files.len())];
            let path = dest.join(&victim.path);
            let mut bytes = std::fs::read(&path).map_err(io)?;
            let at = r.gen_range(0..bytes.len());
            bytes[at] ^= 1 << r.gen_range(0..8);
            std::fs::write(&path, bytes).map_err(io)?;
            corrupted += 1;
            let report = validate_format(&m);
            let flagged = report.violations.iter().any(|v| v.file == victim.path && v.rule == "checksum-match");
            if flagged && matches!(import(&m), Err(DataError::ChecksumMismatch { ref file }) if *file == victim.path) {
                detected += 1;
            }
        }
    }
    ensure!(detected == corrupted, "detected {detected}/{corrupted} corruptions");

    for seed in 0..20 {
        let mut set = random_episode_set(seed);
        set.iter_mut().for_each(|e| e.success = true);
        let f = FormatId::ALL[seed as usize % 4];
        let dest = dir.path().join(format!("fmt{seed}"));
        let m = export(&set, f, &dest).map_err(data)?;
        if seed % 2 == 1 {
            let path = dest.join(&m.files[0].path);
            let mut bytes = std::fs::read(&path).map_err(io)?;
            bytes.push(b'\n');
            std::fs::write(&path, bytes).map_err(io)?;
        }
        let mut state = DataState { episodes: set.clone(), ..DataState::default() };
        state.exports.insert(f, m.clone());
        let goal = GoalSpec {
            data_goals: Some(DataGoals { task: set[0].task_id.clone(), min_episodes: 0, formats: [f].into(), stability_threshold: None }),
            ..GoalSpec::default()
        };
        let (_, _, fmt) = data_deviation(&state, &goal);
        let ratio = validate_format(&m).ratio();
        ensure!(fmt == ratio, "seed {seed}: format term {fmt} vs validator ratio {ratio}");
    }
    Ok(format!("200 round-trips lossless, {detected}/{corrupted} corruptions detected, format term agrees on 20 manifests"))
}

fn run_script(h: &SessionHandle, script: &[&str]) -> Result<claw_core::executor::ExecutionTrace, String> {
    let mut last = None;
    for cmd in script {
        let out = h.turn(UserTurn::text(*cmd)).map_err(|e| format!("{cmd}: {e}"))?;
        let trace = h.approve(&out.plan_id).map_err(|e| format!("{cmd}: {e}"))?;
        ensure!(trace.status != FinalStatus::Aborted, "{cmd}: aborted");
        last = Some(trace);
    }
    last.ok_or_else(|| "empty script".to_string())
}

fn timed(name: &str, f: impl FnOnce() -> Result<(), String>) -> Result<f64, String> {
    let started = Instant::now();
    f().map_err(|e| format!("scenario {name}: {e}"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "scenario {name} took {secs:.1}s");
    Ok(secs)
}

fn log_of(svc: &Service, h: &SessionHandle) -> PathBuf {
    svc.session_dir(&h.state().session_id).join("events.jsonl")
}

fn scenarios(data: &Path, logs: &mut Vec<(PathBuf, PathBuf, String)>) -> Outcome {
    let svc = Arc::new(Service::open(data, 7).map_err(|e| e.to_string())?);
    let mut times = Vec::new();
    let mut session = |name: &str, f: &dyn Fn(&SessionHandle) -> Result<(), String>| -> Result<(), String> {
        let h = svc.create_session(None).map_err(|e| e.to_string())?;
        times.push((name.to_string(), timed(name, || f(&h))?));
        logs.push((log_of(&svc, &h), data.to_path_buf(), h.state().head.to_string()));
        Ok(())
    };

    session("a", &|h| {
        let t = run_script(h, &["CREATE scene WITH table, mug ON table, bowl NEAR mug SET lighting=0.6, robot=franka, cameras=1"])?;
        let d = t.deviation.ok_or("no deviation")?;
        ensure!(d.total == 0.0, "final d = {}", d.total);
        Ok(())
    })?;

    session("b", &|h| {
        run_script(h, &["CREATE scene WITH table, mug ON table, bowl, plate"])?;
        let t = run_script(h, &["EDIT scene SET lighting=0.3 REMOVE plate PRESERVE all EXCEPT lighting, plate"])?;
        let d = t.deviation.ok_or("no deviation")?;
        ensure!(d.terms.goal == 0.0 && d.terms.pres == 0.0, "goal {} pres {}", d.terms.goal, d.terms.pres);
        Ok(())
    })?;

    session("c", &|h| {
        let n = 12;
        run_script(h, &["CREATE scene WITH table, mug ON table"])?;
        let t = run_script(h, &[&format!("COLLECT {n} episodes OF pick_mug EXPORT hierarchical-container, episode-folder, sequential-record")])?;
        let d = t.deviation.ok_or("no deviation")?;
        ensure!(d.terms.task == 0.0 && d.terms.fmt == 0.0, "task {} fmt {}", d.terms.task, d.terms.fmt);
        let ctx = h.state().context;
        let got = ctx.data.episodes_of("pick_mug").filter(|e| e.success).count();
        ensure!(got == n, "{got} successful episodes, asked for {n}");
        for f in [FormatId::HierarchicalContainer, FormatId::EpisodeFolder, FormatId::SequentialRecord] {
            let m = ctx.data.exports.get(&f).ok_or(format!("no {f} manifest"))?;
            ensure!(m.episode_ids.len() == n, "{f} manifest holds {} episodes", m.episode_ids.len());
            ensure!(validate_format(m).is_clean(), "{f} manifest invalid");
        }
        Ok(())
    })?;

    session("d", &|h| {
        run_script(h, &["CREATE scene WITH table, mug ON table", "COLLECT 6 episodes OF pick_mug"])?;
        let t = run_script(h, &["EVALUATE act, dp ON libero"])?;
        let d = t.deviation.ok_or("no deviation")?;
        ensure!(d.terms.eval == 0.0, "eval term {}", d.terms.eval);
        let reports = h.state().context.model.eval_reports;
        for m in ["act", "dp"] {
            ensure!(reports.iter().any(|r| r.model == m && r.benchmark == "libero"), "no {m} report on libero");
        }
        Ok(())
    })?;

    let summary: Vec<String> = times.iter().map(|(n, s)| format!("{n} {s:.2}s")).collect();
    Ok(format!("scenarios {}", summary.join(", ")))
}

fn recovery_liveness(data: &Path, logs: &mut Vec<(PathBuf, PathBuf, String)>) -> Outcome {
    let svc = Service::open(data, 0).map_err(|e| e.to_string())?;
    let cats = ["apple", "banana", "bottle", "bowl", "box", "cabinet", "cube", "laptop", "mug", "plate", "shelf", "sponge"];
    let command = format!("CREATE scene WITH {}", cats.join(", "));
    let config = |seed: u64| SessionConfig {
        faults: Some(FaultInjector::new(seed).with_rate("spawn-asset", 0.3, FaultMode::ErrorBeforeMutation)),
        cost: CostModel { lambda: 100.0, ..CostModel::default() },
        ..SessionConfig::seeded(seed)
    };
    // The workflow is planned once and proposed to every session; all of
    // them start from the same empty scene.
    let first = svc.create_session(Some(config(0))).map_err(|e| e.to_string())?;
    let proposal = first.turn(UserTurn::text(&command)).map_err(|e| e.to_string())?;
    ensure!(proposal.workflow.calls.len() == cats.len(), "plan has {} steps", proposal.workflow.calls.len());
    let mut after_recovery = 0;
    for seed in 0..100u64 {
        let h = if seed == 0 { first.clone() } else { svc.create_session(Some(config(seed))).map_err(|e| e.to_string())? };
        let plan_id = if seed == 0 {
            proposal.plan_id.clone()
        } else {
            let mut s = h.lock().map_err(|e| e.to_string())?;
            s.propose_workflow(proposal.intent.clone(), proposal.workflow.clone()).map_err(|e| e.to_string())?.plan_id
        };
        let trace = h.approve(&plan_id).map_err(|e| format!("seed {seed}: {e}"))?;
        let ctx = h.state().context;
        ensure!(validate_context(&ctx).is_empty(), "seed {seed}: final context invalid");
        if trace.status == FinalStatus::CompletedAfterRecovery {
            ensure!(trace.records.iter().any(|r| r.recovery == RecoveryKind::Substitute), "seed {seed}: recovered without substitute");
            after_recovery += 1;
        }
        logs.push((log_of(&svc, &h), data.to_path_buf(), h.state().head.to_string()));
    }
    ensure!(after_recovery >= 90, "{after_recovery}/100 completed after recovery");
    Ok(format!("{after_recovery}/100 completed after recovery, 100/100 valid"))
}

fn replay_determinism(logs: &[(PathBuf, PathBuf, String)]) -> Outcome {
    ensure!(logs.len() == 104, "expected 104 logs from criteria 5 and 6, have {}", logs.len());
    for (log, data, head) in logs {
        let out = replay_file(log, data).map_err(|e| format!("{}: {e}", log.display()))?;
        ensure!(out.head == out.recorded_head, "{}: replayed {} recorded {}", log.display(), out.head, out.recorded_head);
        ensure!(out.head.to_string() == *head, "{}: replayed {} session {head}", log.display(), out.head);
    }
    Ok(format!("{}/{} logs reproduce their head", logs.len(), logs.len()))
}

#[derive(Deserialize)]
struct Case {
    context: String,
    command: String,
    #[serde(default)]
    observation: Option<ObservationDescriptor>,
    expected: IntentRepresentation,
}

fn intent_corpus() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/intents.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cases: Vec<Case> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure!(cases.len() >= 30, "corpus has only {} commands", cases.len());
    let assets = AssetLibrary::builtin();
    for c in &cases {
        let turn = UserTurn { text: c.command.clone(), observation: c.observation.clone(), attachments: vec![] };
        let got = parse_intent(&turn, &DialogueContext::default(), &corpus_context(&c.context), &assets, &RejectingBackend)
            .map_err(|e| format!("{}: {e}", c.command))?;
        ensure!(got == c.expected, "{}: intent differs from the recorded one", c.command);
    }
    Ok(format!("{}/{} commands parse to their recorded intent", cases.len(), cases.len()))
}
