//! Sessions, the event log and its replay, the HTTP API and the pieces
//! the `claw` command-line tool is built from.

pub mod events;
pub mod http;
mod session;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use claw_core::adapters::{AssetLibrary, AssetRecord, SourceDescriptor, MOCK_SIM_BACKEND};
use claw_core::executor::ExecutionTrace;
use claw_core::intent::UserTurn;
use claw_core::state::SnapshotId;

pub use events::{Event, EventKind, ReplayError, ReplayOutcome, LOG_VERSION};
pub use session::{
    EventFeed, PlanStatus, PlanSummary, ProposedPlan, Session, SessionConfig, SessionError, SessionState, TurnOutcome,
    ATTENTION_PER_APPROVAL,
};

/// A session behind its single-writer lock. Mutating calls never wait:
/// if another request holds the session they fail with `Busy`.
pub struct SessionHandle {
    session: Mutex<Session>,
    feed: Arc<EventFeed>,
    published: RwLock<SessionState>,
}

impl SessionHandle {
    fn new(session: Session) -> Self {
        SessionHandle { feed: session.feed(), published: RwLock::new(session.state()), session: Mutex::new(session) }
    }

    /// Exclusive access, or `Busy` if a request is in flight.
    pub fn lock(&self) -> Result<MutexGuard<'_, Session>, SessionError> {
        match self.session.try_lock() {
            Ok(g) => Ok(g),
            Err(std::sync::TryLockError::WouldBlock) => Err(SessionError::Busy),
            Err(std::sync::TryLockError::Poisoned(p)) => Ok(p.into_inner()),
        }
    }

    fn with<T>(&self, f: impl FnOnce(&mut Session) -> Result<T, SessionError>) -> Result<T, SessionError> {
        let mut s = self.lock()?;
        let out = f(&mut s);
        *self.published.write().expect("state lock") = s.state();
        out
    }

    pub fn turn(&self, turn: UserTurn) -> Result<TurnOutcome, SessionError> {
        self.with(|s| s.handle_turn(turn))
    }

    pub fn approve(&self, plan_id: &str) -> Result<ExecutionTrace, SessionError> {
        self.with(|s| s.approve(plan_id))
    }

    pub fn rollback(&self, to: &SnapshotId) -> Result<SnapshotId, SessionError> {
        self.with(|s| s.rollback(to))
    }

    /// State as of the last completed request; readable while a plan runs.
    pub fn state(&self) -> SessionState {
        self.published.read().expect("state lock").clone()
    }

    pub fn traces(&self) -> Result<Vec<ExecutionTrace>, SessionError> {
        Ok(self.lock()?.traces().to_vec())
    }

    pub fn feed(&self) -> Arc<EventFeed> {
        self.feed.clone()
    }
}

/// Every session of one data directory plus the shared asset store.
///
/// Layout: `<data>/sessions/<id>/{events.jsonl, snapshots/, exports/}`,
/// `<data>/assets/<asset id>/` and an optional `<data>/catalog/`.
pub struct Service {
    data_dir: PathBuf,
    seed: u64,
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
    assets: Mutex<AssetLibrary>,
    next_id: Mutex<u64>,
}

impl Service {
    pub fn open(data_dir: impl Into<PathBuf>, seed: u64) -> Result<Service, SessionError> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(data_dir.join("sessions")).map_err(|e| SessionError::Storage(e.to_string()))?;
        let assets = open_assets(&data_dir)?;
        Ok(Service {
            data_dir,
            seed,
            sessions: RwLock::new(BTreeMap::new()),
            assets: Mutex::new(assets),
            next_id: Mutex::new(1),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.data_dir.join("sessions").join(id)
    }

    /// Creates a session; without a config the service seed is used.
    pub fn create_session(&self, config: Option<SessionConfig>) -> Result<Arc<SessionHandle>, SessionError> {
        let config = config.unwrap_or_else(|| SessionConfig::seeded(self.seed));
        let id = {
            let mut next = self.next_id.lock().expect("id lock");
            loop {
                let id = format!("s{:04}", *next);
                *next += 1;
                if !self.session_dir(&id).exists() {
                    break id;
                }
            }
        };
        let session = Session::create(&id, &self.session_dir(&id), config, open_assets(&self.data_dir)?)?;
        let handle = Arc::new(SessionHandle::new(session));
        self.sessions.write().expect("sessions lock").insert(id, handle.clone());
        Ok(handle)
    }

    /// A live session, reopening it from disk when needed.
    pub fn session(&self, id: &str) -> Result<Arc<SessionHandle>, SessionError> {
        if let Some(h) = self.sessions.read().expect("sessions lock").get(id) {
            return Ok(h.clone());
        }
        let valid = !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        let dir = self.session_dir(id);
        if !valid || !dir.join("events.jsonl").exists() {
            return Err(SessionError::UnknownSession(id.into()));
        }
        let session = Session::open(id, &dir, open_assets(&self.data_dir)?)?;
        let mut sessions = self.sessions.write().expect("sessions lock");
        Ok(sessions.entry(id.to_string()).or_insert_with(|| Arc::new(SessionHandle::new(session))).clone())
    }

    pub fn assets(&self) -> Vec<AssetRecord> {
        self.assets.lock().expect("asset lock").records().cloned().collect()
    }

    /// Ingests into the shared store; sessions created afterwards see it.
    pub fn ingest_asset(&self, source: &SourceDescriptor) -> Result<AssetRecord, SessionError> {
        self.assets
            .lock()
            .expect("asset lock")
            .ingest(source, MOCK_SIM_BACKEND)
            .map_err(|e| SessionError::Execution(e.to_string()))
    }
}

fn open_assets(data_dir: &Path) -> Result<AssetLibrary, SessionError> {
    let lib = AssetLibrary::open(data_dir.join("assets")).map_err(|e| SessionError::Storage(e.to_string()))?;
    let catalog = data_dir.join("catalog");
    Ok(if catalog.is_dir() { lib.with_catalog_dir(catalog) } else { lib })
}

/// Replays a session's log file against the asset store of `data_dir`.
pub fn replay_file(log: &Path, data_dir: &Path) -> Result<ReplayOutcome, SessionError> {
    let events = events::read_log(log)?;
    let mut assets = open_assets(data_dir)?;
    Ok(events::replay(&events, &mut assets)?)
}
