//! Append-only JSONL event log and deterministic replay.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use claw_core::adapters::{AssetLibrary, BackendSet};
use claw_core::deviation::DeviationReport;
use claw_core::executor::{FinalStatus, StepRecord};
use claw_core::planner::{DryRun, Workflow};
use claw_core::state::{OperationalContext, SnapshotId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SessionConfig;

/// Schema version written into every event line.
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated {
        config: SessionConfig,
        initial: Box<OperationalContext>,
        head: SnapshotId,
    },
    TurnReceived {
        text: String,
    },
    TurnRejected {
        code: String,
        message: String,
    },
    PlanProposed {
        plan_id: String,
        base: SnapshotId,
        workflow: Box<Workflow>,
        dry_run: Box<DryRun>,
    },
    PlanApproved {
        plan_id: String,
        /// Human attention charged for the approval.
        attention_units: f64,
    },
    StepCompleted {
        plan_id: String,
        record: Box<StepRecord>,
    },
    WorkflowFinished {
        plan_id: String,
        status: FinalStatus,
        head: SnapshotId,
        deviation: Option<DeviationReport>,
    },
    ExecutionFailed {
        plan_id: String,
        message: String,
    },
    RolledBack {
        from: SnapshotId,
        to: SnapshotId,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionCreated { .. } => "session_created",
            EventKind::TurnReceived { .. } => "turn_received",
            EventKind::TurnRejected { .. } => "turn_rejected",
            EventKind::PlanProposed { .. } => "plan_proposed",
            EventKind::PlanApproved { .. } => "plan_approved",
            EventKind::StepCompleted { .. } => "step_completed",
            EventKind::WorkflowFinished { .. } => "workflow_finished",
            EventKind::ExecutionFailed { .. } => "execution_failed",
            EventKind::RolledBack { .. } => "rolled_back",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub v: u32,
    /// Position in the session's log, starting at 0.
    pub seq: u64,
    pub session_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("corrupt log at byte {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
    #[error("log unreadable: {0}")]
    Io(String),
}

fn corrupt(offset: u64, reason: impl Into<String>) -> ReplayError {
    ReplayError::CorruptLog { offset, reason: reason.into() }
}

/// Handle on a session's `events.jsonl`. Each event is written with a
/// single `write_all` of one complete line.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(EventLog { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &Event) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()
    }
}

/// Parses a log into events with the byte offset of each line. A final
/// line without its newline is a torn write and reported as corrupt.
pub fn parse_log(bytes: &[u8]) -> Result<Vec<(u64, Event)>, ReplayError> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|b| *b == b'\n') else {
            return Err(corrupt(offset as u64, "truncated line"));
        };
        let line = &rest[..end];
        let event: Event = serde_json::from_slice(line).map_err(|e| corrupt(offset as u64, format!("unparsable event: {e}")))?;
        if event.v != LOG_VERSION {
            return Err(corrupt(offset as u64, format!("unsupported log version {}", event.v)));
        }
        if event.seq != out.len() as u64 {
            return Err(corrupt(offset as u64, format!("expected seq {}, found {}", out.len(), event.seq)));
        }
        out.push((offset as u64, event));
        offset += end + 1;
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<(u64, Event)>, ReplayError> {
    let bytes = fs::read(path).map_err(|e| ReplayError::Io(format!("{}: {e}", path.display())))?;
    parse_log(&bytes)
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub ctx: OperationalContext,
    pub head: SnapshotId,
    /// Head recorded by the last `workflow_finished` or `rolled_back` event.
    pub recorded_head: SnapshotId,
    pub events: usize,
}

fn hash(ctx: &OperationalContext, offset: u64) -> Result<SnapshotId, ReplayError> {
    ctx.content_hash().map_err(|e| corrupt(offset, e.to_string()))
}

/// Rebuilds a session's context from its log.
///
/// Every verified step is re-applied on fault-free mock backends and must
/// land on its recorded post hash; failed steps leave the context at
/// their pre-step state, as the executor restored it. A plan that ends in
/// `execution_failed` leaves the context where the plan started. Export
/// actions rewrite their files at the recorded destinations.
pub fn replay(events: &[(u64, Event)], assets: &mut AssetLibrary) -> Result<ReplayOutcome, ReplayError> {
    let Some((first_at, first)) = events.first() else {
        return Err(corrupt(0, "empty log"));
    };
    let EventKind::SessionCreated { initial, head, .. } = &first.kind else {
        return Err(corrupt(*first_at, "log does not start with session_created"));
    };
    let mut ctx = (**initial).clone();
    let mut current = hash(&ctx, *first_at)?;
    if current != *head {
        return Err(corrupt(*first_at, "initial context does not match its hash"));
    }
    let mut recorded_head = head.clone();
    let mut seen: BTreeMap<SnapshotId, OperationalContext> = BTreeMap::from([(current.clone(), ctx.clone())]);
    // Routing only; faults are never replayed.
    let mut backends = BackendSet::mock(std::env::temp_dir());
    // Where the running plan started; a failed execution leaves the session there.
    let mut plan_start = (ctx.clone(), current.clone());

    for (offset, event) in &events[1..] {
        let offset = *offset;
        match &event.kind {
            EventKind::SessionCreated { .. } => return Err(corrupt(offset, "second session_created")),
            EventKind::StepCompleted { record, .. } => {
                if record.pre != current {
                    return Err(corrupt(offset, format!("step starts at {} but context is {}", record.pre, current)));
                }
                if !record.verdict.is_ok() {
                    continue;
                }
                let post = record.post.as_ref().ok_or_else(|| corrupt(offset, "verified step without post hash"))?;
                if let Some(action) = &record.action {
                    ctx = backends.apply(action, &ctx, assets).map_err(|e| corrupt(offset, format!("re-apply failed: {e}")))?;
                }
                current = hash(&ctx, offset)?;
                if current != *post {
                    return Err(corrupt(offset, format!("step {} reproduced {} instead of {}", record.index, current, post)));
                }
                seen.insert(current.clone(), ctx.clone());
            }
            EventKind::WorkflowFinished { head, .. } => {
                if *head != current {
                    return Err(corrupt(offset, format!("workflow head {head} differs from replayed {current}")));
                }
                recorded_head = head.clone();
            }
            EventKind::RolledBack { from, to } => {
                if *from != current {
                    return Err(corrupt(offset, "rollback from an unexpected state"));
                }
                ctx = seen.get(to).cloned().ok_or_else(|| corrupt(offset, format!("rollback target {to} never reached")))?;
                current = to.clone();
                recorded_head = to.clone();
            }
            EventKind::PlanApproved { .. } => plan_start = (ctx.clone(), current.clone()),
            EventKind::ExecutionFailed { .. } => (ctx, current) = plan_start.clone(),
            EventKind::TurnReceived { .. } | EventKind::TurnRejected { .. } | EventKind::PlanProposed { .. } => {}
        }
    }
    Ok(ReplayOutcome { ctx, head: current, recorded_head, events: events.len() })
}
