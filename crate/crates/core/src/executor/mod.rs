//! Step-by-step workflow execution with verification after every call,
//! snapshot rollback and the repair → substitute → replan → abort ladder.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{bind, AssetLibrary, BackendSet};
use crate::deviation::{total_deviation, DeviationReport};
use crate::intent::ParamValue;
use crate::planner::{replan, AbstractState, CostModel, Workflow};
use crate::skills::{check_abstract_preconditions, instantiate_postconditions, SkillCall, SkillLibrary};
use crate::state::{validate_context, OperationalContext, SnapshotId, SnapshotStore};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("workflow aborted after {} step record(s)", trace.records.len())]
    AbortedWorkflow { ctx: Box<OperationalContext>, trace: Box<ExecutionTrace> },
    #[error("no backend implements binding {0}")]
    BackendUnavailable(String),
    #[error("state error: {0}")]
    State(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Ok,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictMessage {
    pub code: String,
    pub detail: String,
    /// Field paths or references the failure concerns.
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub status: VerdictStatus,
    pub message: Option<VerdictMessage>,
    pub rollback: bool,
}

impl VerifierVerdict {
    pub fn ok() -> Self {
        VerifierVerdict { status: VerdictStatus::Ok, message: None, rollback: false }
    }

    pub fn fail(code: &str, detail: impl Into<String>, paths: Vec<String>, rollback: bool) -> Self {
        VerifierVerdict {
            status: VerdictStatus::Fail,
            message: Some(VerdictMessage { code: code.into(), detail: detail.into(), paths }),
            rollback,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == VerdictStatus::Ok
    }

    pub fn code(&self) -> Option<&str> {
        self.message.as_ref().map(|m| m.code.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    None,
    Repair,
    Substitute,
    Replan,
    Abort,
}

/// What to do after a failed step.
#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryAction {
    /// Retry with re-grounded parameters.
    Repair(SkillCall),
    /// Retry with a signature-equivalent skill.
    Substitute(SkillCall),
    /// Continue with a fresh plan from the current context.
    Replan(Workflow),
    Abort,
}

impl RecoveryAction {
    pub fn kind(&self) -> RecoveryKind {
        match self {
            RecoveryAction::Repair(_) => RecoveryKind::Repair,
            RecoveryAction::Substitute(_) => RecoveryKind::Substitute,
            RecoveryAction::Replan(_) => RecoveryKind::Replan,
            RecoveryAction::Abort => RecoveryKind::Abort,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryPolicy {
    pub max_repairs_per_step: u32,
    pub max_substitutions_per_step: u32,
    pub max_replans: u32,
}

impl Default for RecoveryPolicy {
    fn default() -> Self {
        RecoveryPolicy { max_repairs_per_step: 1, max_substitutions_per_step: 1, max_replans: 2 }
    }
}

impl RecoveryPolicy {
    pub fn none() -> Self {
        RecoveryPolicy { max_repairs_per_step: 0, max_substitutions_per_step: 0, max_replans: 0 }
    }
}

/// Recovery budget spent so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecoveryCounters {
    pub repairs: u32,
    pub substitutions: u32,
    pub replans: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Position of the call in the workflow being executed.
    pub index: usize,
    /// Replans performed before this record; indices are contiguous within one attempt.
    pub attempt: u32,
    pub call: SkillCall,
    pub action: Option<crate::adapters::GroundedAction>,
    pub pre: SnapshotId,
    pub post: Option<SnapshotId>,
    pub verdict: VerifierVerdict,
    /// Hash of the context re-read from the pre-step snapshot after a rollback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rolled_back_to: Option<SnapshotId>,
    pub wall_time_ms: f64,
    pub recovery: RecoveryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalStatus {
    Completed,
    CompletedAfterRecovery,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub intent_id: String,
    pub workflow_id: String,
    pub records: Vec<StepRecord>,
    pub status: FinalStatus,
    pub deviation: Option<DeviationReport>,
    /// Snapshot of the context the session ends in.
    pub head: SnapshotId,
}

impl ExecutionTrace {
    /// JSON lines, one step record per line.
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }

    /// The trace without wall-clock times, for determinism comparisons.
    pub fn without_timing(&self) -> ExecutionTrace {
        let mut t = self.clone();
        for r in &mut t.records {
            r.wall_time_ms = 0.0;
        }
        t
    }
}

/// Verdict for a call given the context it produced. The call's
/// postconditions must already be instantiated against the pre-step state.
pub fn verify_step(call: &SkillCall, ctx_after: &OperationalContext, pre: &SnapshotId) -> VerifierVerdict {
    let changed = || ctx_after.content_hash().map(|h| &h != pre).unwrap_or(true);
    let violations = validate_context(ctx_after);
    if let Some(first) = violations.first() {
        let paths = violations.iter().map(|v| v.path.clone()).collect();
        return VerifierVerdict::fail(&first.rule, first.to_string(), paths, changed());
    }
    for p in &call.postconditions {
        if let Err(detail) = p.check(ctx_after) {
            return VerifierVerdict::fail("postcondition-failed", detail, vec![p.reference()], changed());
        }
    }
    VerifierVerdict::ok()
}

/// Re-grounds entity parameters whose id no longer exists against the
/// unique entity of the same category. `None` when nothing changes.
pub fn repair_call(call: &SkillCall, ctx: &OperationalContext) -> Option<SkillCall> {
    let scene = &ctx.scene;
    let mut out = call.clone();
    let mut changed = false;
    for v in out.params.values_mut() {
        if let ParamValue::Entity(r) = v {
            if let Some(id) = &r.id {
                if scene.entity(id).is_none() {
                    let mut same: Vec<&str> = scene.entities_of(&r.category).map(|e| e.id.as_str()).collect();
                    same.sort();
                    if let [only] = same.as_slice() {
                        r.id = Some(only.to_string());
                        changed = true;
                    }
                }
            }
        }
    }
    changed.then(|| {
        out.postconditions.clear();
        out
    })
}

/// First applicable recovery in the fixed order repair, substitute,
/// replan, abort, within the policy's limits.
#[allow(clippy::too_many_arguments)]
pub fn recover(
    verdict: &VerifierVerdict,
    wf: &Workflow,
    index: usize,
    ctx: &OperationalContext,
    lib: &SkillLibrary,
    assets: &AssetLibrary,
    policy: &RecoveryPolicy,
    used: &RecoveryCounters,
    cost: &CostModel,
) -> RecoveryAction {
    debug_assert!(!verdict.is_ok());
    let Some(call) = wf.calls.get(index) else { return RecoveryAction::Abort };
    if used.repairs < policy.max_repairs_per_step {
        if let Some(fixed) = repair_call(call, ctx) {
            return RecoveryAction::Repair(fixed);
        }
    }
    if used.substitutions < policy.max_substitutions_per_step {
        if let Some(sub) = lib.next_substitute(&call.skill_id) {
            return RecoveryAction::Substitute(SkillCall::new(sub.skill_id.clone(), call.params.clone()));
        }
    }
    if used.replans < policy.max_replans {
        if let Ok(new) = replan(wf, index, ctx, lib, assets, cost) {
            return RecoveryAction::Replan(new);
        }
    }
    RecoveryAction::Abort
}

/// Everything execution needs besides the workflow and context.
pub struct ExecEnv<'a> {
    pub backends: &'a mut BackendSet,
    pub lib: &'a SkillLibrary,
    pub assets: &'a mut AssetLibrary,
    pub store: &'a SnapshotStore,
    pub policy: RecoveryPolicy,
    pub cost: CostModel,
    pub seed: u64,
}

fn step_seed(seed: u64, n: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(n.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

fn state_err(e: impl std::fmt::Display) -> ExecError {
    ExecError::State(e.to_string())
}

/// Runs `wf` from `ctx`. Each step snapshots the context, binds and
/// applies the call, then verifies it; a failed step that changed the
/// context is rolled back to its pre-step snapshot before recovery.
///
/// `observe` sees every step record as soon as it is final.
pub fn execute(
    wf: &Workflow,
    ctx: OperationalContext,
    env: ExecEnv<'_>,
    observe: &mut dyn FnMut(&StepRecord),
) -> Result<(OperationalContext, ExecutionTrace), ExecError> {
    let ExecEnv { backends, lib, assets, store, policy, cost, seed } = env;
    let baseline = ctx.scene.clone();
    let mut ctx = ctx;
    let mut current = wf.clone();
    let mut i = 0usize;
    let mut attempt = 0u32;
    let mut used = RecoveryCounters::default();
    let mut records: Vec<StepRecord> = Vec::new();
    let mut recovered = false;
    let mut aborted = false;
    let mut issued = 0u64;

    while i < current.calls.len() {
        let started = Instant::now();
        let pre = store.snapshot(&ctx).map_err(state_err)?;
        let abstract_pre = AbstractState::from_context(&ctx, assets);
        let mut call = current.calls[i].clone();
        let mut action = None;
        let verdict = match lib.get(&call.skill_id) {
            None => VerifierVerdict::fail("unknown-skill", format!("unknown skill {}", call.skill_id), vec![], false),
            Some(spec) => {
                call.postconditions = instantiate_postconditions(spec, &call.params, &abstract_pre);
                let violated = spec.check_params(&call.params).err().map(|e| ("schema-mismatch".to_string(), e.to_string()));
                let violated = violated.or_else(|| {
                    check_abstract_preconditions(spec, &call.params, &abstract_pre)
                        .into_iter()
                        .next()
                        .map(|v| (v.rule, v.detail))
                });
                if let Some((rule, detail)) = violated {
                    VerifierVerdict::fail(&rule, detail, vec![], false)
                } else {
                    let backend = backends
                        .route(&spec.binding)
                        .cloned()
                        .ok_or_else(|| ExecError::BackendUnavailable(spec.binding.clone()))?;
                    issued += 1;
                    match bind(&call, spec, &ctx, assets, &backend, step_seed(seed, issued)) {
                        Err(e) => VerifierVerdict::fail(e.code(), e.to_string(), vec![], false),
                        Ok(grounded) => {
                            let outcome = backends.apply(&grounded, &ctx, assets);
                            action = Some(grounded);
                            match outcome {
                                Err(e) => VerifierVerdict::fail(e.code(), e.to_string(), vec![], false),
                                Ok(after) => {
                                    let v = verify_step(&call, &after, &pre);
                                    if v.is_ok() {
                                        ctx = after;
                                    }
                                    v
                                }
                            }
                        }
                    }
                }
            }
        };

        let mut record = StepRecord {
            index: i,
            attempt,
            call: call.clone(),
            action,
            pre: pre.clone(),
            post: None,
            verdict: verdict.clone(),
            rolled_back_to: None,
            wall_time_ms: 0.0,
            recovery: RecoveryKind::None,
            recovery_detail: None,
        };
        if verdict.is_ok() {
            record.post = Some(store.snapshot(&ctx).map_err(state_err)?);
            record.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
            observe(&record);
            records.push(record);
            i += 1;
            used.repairs = 0;
            used.substitutions = 0;
            continue;
        }

        // The failed output was never adopted; restoring the snapshot
        // makes the session state byte-identical to the pre-step bytes.
        ctx = store.restore(&pre).map_err(state_err)?;
        if verdict.rollback {
            record.rolled_back_to = Some(ctx.content_hash().map_err(state_err)?);
        }
        recovered = true;
        let decision = recover(&verdict, &current, i, &ctx, lib, assets, &policy, &used, &cost);
        record.recovery = decision.kind();
        record.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        match decision {
            RecoveryAction::Repair(fixed) => {
                used.repairs += 1;
                record.recovery_detail = Some(fixed.label());
                current.calls[i] = fixed;
            }
            RecoveryAction::Substitute(sub) => {
                used.substitutions += 1;
                record.recovery_detail = Some(sub.label());
                current.calls[i] = sub;
            }
            RecoveryAction::Replan(new) => {
                used = RecoveryCounters { replans: used.replans + 1, ..RecoveryCounters::default() };
                attempt += 1;
                record.recovery_detail = Some(format!("workflow {} with {} call(s)", new.id, new.calls.len()));
                let mut calls = current.calls[..i].to_vec();
                calls.extend(new.calls);
                current.calls = calls;
            }
            RecoveryAction::Abort => aborted = true,
        }
        observe(&record);
        records.push(record);
        if aborted {
            break;
        }
    }

    let head = store.snapshot(&ctx).map_err(state_err)?;
    let deviation = total_deviation(&ctx, &wf.goal, Some(&baseline), cost.weights).ok().map(|d| d.with_baseline(records.first().map(|r| r.pre.clone())));
    let status = if aborted {
        FinalStatus::Aborted
    } else if recovered {
        FinalStatus::CompletedAfterRecovery
    } else {
        FinalStatus::Completed
    };
    let trace = ExecutionTrace { intent_id: wf.intent_id.clone(), workflow_id: wf.id.clone(), records, status, deviation, head };
    if aborted {
        return Err(ExecError::AbortedWorkflow { ctx: Box::new(ctx), trace: Box::new(trace) });
    }
    Ok((ctx, trace))
}
