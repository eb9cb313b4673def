//! A conversational session: turns are planned into proposals, proposals
//! run only after approval, and every state change is logged.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use claw_core::adapters::{AssetLibrary, BackendSet, FaultInjector};
use claw_core::executor::{execute, ExecEnv, ExecError, ExecutionTrace, RecoveryPolicy};
use claw_core::intent::{parse_intent, DialogueContext, DialogueEntry, IntentError, IntentRepresentation, RejectingBackend, UserTurn};
use claw_core::planner::{dry_run, plan, AbstractState, CostModel, DryRun, ObjectiveBreakdown, PlannerError, Workflow};
use claw_core::skills::SkillLibrary;
use claw_core::state::{OperationalContext, SnapshotId, SnapshotStore, StateError};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

use crate::events::{parse_log, replay, Event, EventKind, EventLog, ReplayError, LOG_VERSION};

/// Human attention charged per approved plan.
pub const ATTENTION_PER_APPROVAL: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub seed: u64,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub policy: RecoveryPolicy,
    /// Injected backend faults, for robustness drills.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faults: Option<FaultInjector>,
}

impl SessionConfig {
    pub fn seeded(seed: u64) -> Self {
        SessionConfig { seed, cost: CostModel::default(), policy: RecoveryPolicy::default(), faults: None }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is busy")]
    Busy,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown plan {0}")]
    UnknownPlan(String),
    #[error("plan {plan_id} was proposed for {base} but the session is at {head}; re-plan")]
    StalePlan { plan_id: String, base: SnapshotId, head: SnapshotId },
    #[error("plan {0} was already executed")]
    AlreadyExecuted(String),
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(String),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("execution failed: {0}")]
    Execution(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Busy => "busy",
            SessionError::UnknownSession(_) => "unknown-session",
            SessionError::UnknownPlan(_) => "unknown-plan",
            SessionError::StalePlan { .. } => "stale-plan",
            SessionError::AlreadyExecuted(_) => "already-executed",
            SessionError::UnknownSnapshot(_) => "unknown-snapshot",
            SessionError::Intent(IntentError::UnparsableIntent { .. }) => "unparsable-intent",
            SessionError::Intent(IntentError::AmbiguousReference { .. }) => "ambiguous-reference",
            SessionError::Intent(IntentError::UnknownReference { .. }) => "unknown-reference",
            SessionError::Intent(IntentError::InconsistentGoal(_)) => "inconsistent-goal",
            SessionError::Planner(PlannerError::NoApplicableSkills) => "no-applicable-skills",
            SessionError::Planner(PlannerError::PlanningBudgetExceeded(_)) => "planning-budget-exceeded",
            SessionError::Planner(_) => "planner-error",
            SessionError::Execution(_) => "execution-failed",
            SessionError::Storage(_) => "storage",
            SessionError::Replay(_) => "corrupt-log",
        }
    }
}

fn storage(e: impl std::fmt::Display) -> SessionError {
    SessionError::Storage(e.to_string())
}

fn state_err(e: StateError) -> SessionError {
    storage(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Proposed,
    Executing,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedPlan {
    pub plan_id: String,
    pub status: PlanStatus,
    /// Context hash the plan was computed from.
    pub base: SnapshotId,
    pub workflow: Workflow,
    pub dry_run: DryRun,
}

/// What a turn yields: the grounded intent and the plan awaiting approval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub plan_id: String,
    pub intent: IntentRepresentation,
    pub workflow: Workflow,
    pub objective: ObjectiveBreakdown,
    pub dry_run: DryRun,
}

/// Ordered feed of a session's events for concurrent readers.
#[derive(Debug)]
pub struct EventFeed {
    events: Mutex<Vec<Event>>,
    len: watch::Sender<u64>,
}

impl EventFeed {
    fn new(events: Vec<Event>) -> Self {
        let n = events.len() as u64;
        EventFeed { events: Mutex::new(events), len: watch::channel(n).0 }
    }

    fn push(&self, e: Event) {
        let n = {
            let mut events = self.events.lock().expect("feed lock");
            events.push(e);
            events.len() as u64
        };
        self.len.send_replace(n);
    }

    /// Events with `seq >= from`.
    pub fn since(&self, from: u64) -> Vec<Event> {
        let events = self.events.lock().expect("feed lock");
        events.get(from as usize..).map(<[Event]>::to_vec).unwrap_or_default()
    }

    pub fn len(&self) -> u64 {
        *self.len.borrow()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Receiver notified with the new length after every append.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.len.subscribe()
    }
}

/// Read-only view returned by the state endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct SessionState {
    pub version: u32,
    pub session_id: String,
    pub head: SnapshotId,
    pub context: OperationalContext,
    /// Heads the session has been at, oldest first.
    pub history: Vec<SnapshotId>,
    pub plans: Vec<PlanSummary>,
    pub dialogue: Vec<DialogueEntry>,
    pub attention_units: f64,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanSummary {
    pub plan_id: String,
    pub status: PlanStatus,
    pub base: SnapshotId,
    pub calls: Vec<String>,
    pub objective: ObjectiveBreakdown,
}

pub struct Session {
    id: String,
    dir: PathBuf,
    config: SessionConfig,
    dialog: DialogueContext,
    ctx: OperationalContext,
    head: SnapshotId,
    history: Vec<SnapshotId>,
    store: SnapshotStore,
    log: EventLog,
    feed: Arc<EventFeed>,
    plans: Vec<ProposedPlan>,
    traces: Vec<ExecutionTrace>,
    lib: SkillLibrary,
    assets: AssetLibrary,
    backends: BackendSet,
    attention: f64,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("id", &self.id).field("head", &self.head).finish_non_exhaustive()
    }
}

fn backends_for(dir: &Path, config: &SessionConfig) -> BackendSet {
    let backends = BackendSet::mock(dir.join("exports"));
    match &config.faults {
        Some(f) => backends.with_faults(f.clone()),
        None => backends,
    }
}

impl Session {
    /// Starts a session in `dir` from an empty context.
    pub fn create(id: &str, dir: &Path, config: SessionConfig, assets: AssetLibrary) -> Result<Session, SessionError> {
        Self::create_from(id, dir, config, assets, OperationalContext::empty(format!("{id}-scene")))
    }

    /// Starts a session in `dir` from a given context.
    pub fn create_from(
        id: &str,
        dir: &Path,
        config: SessionConfig,
        assets: AssetLibrary,
        initial: OperationalContext,
    ) -> Result<Session, SessionError> {
        let mut initial = initial;
        initial.canonicalize();
        let store = SnapshotStore::open(dir.join("snapshots")).map_err(state_err)?;
        let head = store.snapshot(&initial).map_err(state_err)?;
        let log = EventLog::open(dir.join("events.jsonl")).map_err(storage)?;
        let mut s = Session {
            id: id.to_string(),
            dir: dir.to_path_buf(),
            backends: backends_for(dir, &config),
            config: config.clone(),
            dialog: DialogueContext::default(),
            ctx: initial.clone(),
            head: head.clone(),
            history: vec![head.clone()],
            store,
            log,
            feed: Arc::new(EventFeed::new(Vec::new())),
            plans: Vec::new(),
            traces: Vec::new(),
            lib: SkillLibrary::builtin(),
            assets,
            attention: 0.0,
        };
        s.emit(EventKind::SessionCreated { config, initial: Box::new(initial), head })?;
        Ok(s)
    }

    /// Reopens a persisted session by replaying its log.
    pub fn open(id: &str, dir: &Path, assets: AssetLibrary) -> Result<Session, SessionError> {
        let bytes = std::fs::read(dir.join("events.jsonl")).map_err(storage)?;
        let events = parse_log(&bytes)?;
        let mut assets = assets;
        let outcome = replay(&events, &mut assets)?;
        let EventKind::SessionCreated { config, .. } = &events[0].1.kind else { unreachable!("replay checked the first event") };
        let config = config.clone();
        let store = SnapshotStore::open(dir.join("snapshots")).map_err(state_err)?;
        store.snapshot(&outcome.ctx).map_err(state_err)?;
        let mut s = Session {
            id: id.to_string(),
            dir: dir.to_path_buf(),
            backends: backends_for(dir, &config),
            config,
            dialog: DialogueContext::default(),
            ctx: outcome.ctx,
            head: outcome.head.clone(),
            history: Vec::new(),
            store,
            log: EventLog::open(dir.join("events.jsonl")).map_err(storage)?,
            feed: Arc::new(EventFeed::new(events.iter().map(|(_, e)| e.clone()).collect())),
            plans: Vec::new(),
            traces: Vec::new(),
            lib: SkillLibrary::builtin(),
            assets,
            attention: 0.0,
        };
        for (_, e) in &events {
            match &e.kind {
                EventKind::SessionCreated { head, .. } => s.history.push(head.clone()),
                EventKind::PlanProposed { plan_id, base, workflow, dry_run } => s.plans.push(ProposedPlan {
                    plan_id: plan_id.clone(),
                    status: PlanStatus::Proposed,
                    base: base.clone(),
                    workflow: (**workflow).clone(),
                    dry_run: (**dry_run).clone(),
                }),
                EventKind::PlanApproved { plan_id, attention_units } => {
                    s.attention += attention_units;
                    s.set_status(plan_id, PlanStatus::Done);
                }
                EventKind::WorkflowFinished { head, .. } | EventKind::RolledBack { to: head, .. } => s.history.push(head.clone()),
                _ => {}
            }
        }
        Ok(s)
    }

    fn set_status(&mut self, plan_id: &str, status: PlanStatus) {
        if let Some(p) = self.plans.iter_mut().find(|p| p.plan_id == plan_id) {
            p.status = status;
        }
    }

    fn emit(&mut self, kind: EventKind) -> Result<(), SessionError> {
        emit_to(&self.id, &mut self.log, &self.feed, kind)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn head(&self) -> &SnapshotId {
        &self.head
    }

    pub fn context(&self) -> &OperationalContext {
        &self.ctx
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn feed(&self) -> Arc<EventFeed> {
        self.feed.clone()
    }

    pub fn log_path(&self) -> PathBuf {
        self.log.path().to_path_buf()
    }

    pub fn traces(&self) -> &[ExecutionTrace] {
        &self.traces
    }

    pub fn plans(&self) -> &[ProposedPlan] {
        &self.plans
    }

    pub fn attention_units(&self) -> f64 {
        self.attention
    }

    pub fn assets(&self) -> &AssetLibrary {
        &self.assets
    }

    /// Parses, grounds and plans a turn. The plan is only proposed.
    pub fn handle_turn(&mut self, turn: UserTurn) -> Result<TurnOutcome, SessionError> {
        self.emit(EventKind::TurnReceived { text: turn.text.clone() })?;
        match self.propose(&turn) {
            Ok(out) => {
                let response = format!("proposed {} with {} step(s)", out.plan_id, out.workflow.calls.len());
                self.dialog.entries.push(DialogueEntry { turn, response, snapshot: self.head.clone() });
                Ok(out)
            }
            Err(e) => {
                self.emit(EventKind::TurnRejected { code: e.code().into(), message: e.to_string() })?;
                Err(e)
            }
        }
    }

    fn propose(&mut self, turn: &UserTurn) -> Result<TurnOutcome, SessionError> {
        let intent = parse_intent(turn, &self.dialog, &self.ctx, &self.assets, &RejectingBackend)?;
        let workflow = plan(&intent, &intent.goal, &self.ctx, &self.lib, &self.assets, &self.config.cost)?;
        self.propose_workflow_inner(intent, workflow)
    }

    /// Proposes an already computed workflow, as if a turn had produced it.
    pub fn propose_workflow(&mut self, intent: IntentRepresentation, workflow: Workflow) -> Result<TurnOutcome, SessionError> {
        self.propose_workflow_inner(intent, workflow)
    }

    fn propose_workflow_inner(&mut self, intent: IntentRepresentation, workflow: Workflow) -> Result<TurnOutcome, SessionError> {
        let start = AbstractState::from_context(&self.ctx, &self.assets);
        let dry = dry_run(&workflow, &start, &self.lib, &self.config.cost)?;
        let plan_id = format!("p{:04}", self.plans.len() + 1);
        self.plans.push(ProposedPlan {
            plan_id: plan_id.clone(),
            status: PlanStatus::Proposed,
            base: self.head.clone(),
            workflow: workflow.clone(),
            dry_run: dry.clone(),
        });
        self.emit(EventKind::PlanProposed {
            plan_id: plan_id.clone(),
            base: self.head.clone(),
            workflow: Box::new(workflow.clone()),
            dry_run: Box::new(dry.clone()),
        })?;
        Ok(TurnOutcome { plan_id, intent, objective: workflow.predicted.clone(), workflow, dry_run: dry })
    }

    /// Executes a proposed plan. Step events are logged and published as
    /// each step finishes. An aborted run is returned as a trace with
    /// status `aborted`, the session left at its last verified state.
    pub fn approve(&mut self, plan_id: &str) -> Result<ExecutionTrace, SessionError> {
        let idx = self.plans.iter().position(|p| p.plan_id == plan_id).ok_or_else(|| SessionError::UnknownPlan(plan_id.into()))?;
        let p = &self.plans[idx];
        if p.status != PlanStatus::Proposed {
            return Err(SessionError::AlreadyExecuted(plan_id.into()));
        }
        if p.base != self.head {
            return Err(SessionError::StalePlan { plan_id: plan_id.into(), base: p.base.clone(), head: self.head.clone() });
        }
        let wf = p.workflow.clone();
        self.plans[idx].status = PlanStatus::Executing;
        self.attention += ATTENTION_PER_APPROVAL;
        self.emit(EventKind::PlanApproved { plan_id: plan_id.into(), attention_units: ATTENTION_PER_APPROVAL })?;

        let Session { id, log, feed, backends, lib, assets, store, config, ctx, .. } = self;
        let mut log_error = None;
        let env = ExecEnv {
            backends,
            lib,
            assets,
            store,
            policy: config.policy,
            cost: config.cost,
            seed: config.seed,
        };
        let mut observe = |r: &claw_core::executor::StepRecord| {
            let kind = EventKind::StepCompleted { plan_id: plan_id.into(), record: Box::new(r.clone()) };
            if let Err(e) = emit_to(id, log, feed, kind) {
                log_error.get_or_insert(e);
            }
        };
        let result = execute(&wf, ctx.clone(), env, &mut observe);
        if let Some(e) = log_error {
            return Err(e);
        }
        self.plans[idx].status = PlanStatus::Done;
        let (next, trace) = match result {
            Ok(v) => v,
            Err(ExecError::AbortedWorkflow { ctx, trace }) => (*ctx, *trace),
            Err(e) => {
                self.emit(EventKind::ExecutionFailed { plan_id: plan_id.into(), message: e.to_string() })?;
                return Err(SessionError::Execution(e.to_string()));
            }
        };
        self.ctx = next;
        self.head = trace.head.clone();
        self.history.push(self.head.clone());
        self.emit(EventKind::WorkflowFinished {
            plan_id: plan_id.into(),
            status: trace.status,
            head: trace.head.clone(),
            deviation: trace.deviation.clone(),
        })?;
        self.traces.push(trace.clone());
        Ok(trace)
    }

    /// Moves the session back to an earlier snapshot of its own history.
    pub fn rollback(&mut self, to: &SnapshotId) -> Result<SnapshotId, SessionError> {
        if !self.history.contains(to) && !self.store.contains(to) {
            return Err(SessionError::UnknownSnapshot(to.to_string()));
        }
        let ctx = self.store.restore(to).map_err(state_err)?;
        let from = self.head.clone();
        self.ctx = ctx;
        self.head = to.clone();
        self.history.push(to.clone());
        self.emit(EventKind::RolledBack { from, to: to.clone() })?;
        Ok(to.clone())
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            version: LOG_VERSION,
            session_id: self.id.clone(),
            head: self.head.clone(),
            context: self.ctx.clone(),
            history: self.history.clone(),
            plans: self
                .plans
                .iter()
                .map(|p| PlanSummary {
                    plan_id: p.plan_id.clone(),
                    status: p.status,
                    base: p.base.clone(),
                    calls: p.workflow.calls.iter().map(|c| c.label()).collect(),
                    objective: p.workflow.predicted.clone(),
                })
                .collect(),
            dialogue: self.dialog.entries.clone(),
            attention_units: self.attention,
            config: self.config.clone(),
        }
    }
}

fn emit_to(id: &str, log: &mut EventLog, feed: &EventFeed, kind: EventKind) -> Result<(), SessionError> {
    let event = Event { v: LOG_VERSION, seq: feed.len(), session_id: id.to_string(), kind };
    log.append(&event).map_err(storage)?;
    feed.push(event);
    Ok(())
}
