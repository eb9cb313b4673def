use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use super::{canonical_serialize, deserialize_canonical, hash_bytes, OperationalContext, SnapshotId, StateError};

const INDEX_FILE: &str = "index";

/// Content-addressed store of full canonical context serializations.
///
/// Optionally backed by a directory holding one `<hash>.json` file per
/// snapshot and an `index` file listing hashes in insertion order. Reads
/// are concurrent, writes serialized.
#[derive(Debug, Default)]
pub struct SnapshotStore {
    dir: Option<PathBuf>,
    entries: RwLock<BTreeMap<SnapshotId, Arc<[u8]>>>,
}

impl SnapshotStore {
    pub fn in_memory() -> Self {
        SnapshotStore::default()
    }

    /// Opens (creating if needed) a directory-backed store and loads its index.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StateError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(storage)?;
        let mut entries = BTreeMap::new();
        let index = dir.join(INDEX_FILE);
        if index.exists() {
            let text = fs::read_to_string(&index).map_err(storage)?;
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let id = SnapshotId(line.to_string());
                let bytes = fs::read(dir.join(format!("{line}.json"))).map_err(storage)?;
                entries.insert(id, Arc::from(bytes));
            }
        }
        Ok(SnapshotStore { dir: Some(dir), entries: RwLock::new(entries) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn snapshot(&self, ctx: &OperationalContext) -> Result<SnapshotId, StateError> {
        let bytes = canonical_serialize(ctx)?;
        let id = SnapshotId(hash_bytes(&bytes));
        if self.contains(&id) {
            return Ok(id);
        }
        let mut entries = self.entries.write().map_err(|_| poisoned())?;
        if entries.contains_key(&id) {
            return Ok(id);
        }
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!("{id}.json.tmp"));
            fs::write(&tmp, &bytes).map_err(storage)?;
            fs::rename(&tmp, dir.join(format!("{id}.json"))).map_err(storage)?;
            let mut index = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(INDEX_FILE))
                .map_err(storage)?;
            writeln!(index, "{id}").map_err(storage)?;
        }
        entries.insert(id.clone(), Arc::from(bytes));
        Ok(id)
    }

    pub fn restore(&self, id: &SnapshotId) -> Result<OperationalContext, StateError> {
        let bytes = self.bytes(id).ok_or_else(|| StateError::UnknownSnapshot(id.clone()))?;
        if hash_bytes(&bytes) != id.0 {
            return Err(StateError::CorruptSnapshot { id: id.clone(), reason: "content hash mismatch".into() });
        }
        let ctx = deserialize_canonical(&bytes)
            .map_err(|e| StateError::CorruptSnapshot { id: id.clone(), reason: e.to_string() })?;
        // Restored contexts must re-serialize to the stored bytes.
        match canonical_serialize(&ctx) {
            Ok(again) if again[..] == bytes[..] => Ok(ctx),
            _ => Err(StateError::CorruptSnapshot { id: id.clone(), reason: "not in canonical form".into() }),
        }
    }

    pub fn bytes(&self, id: &SnapshotId) -> Option<Arc<[u8]>> {
        self.entries.read().ok()?.get(id).cloned()
    }

    pub fn contains(&self, id: &SnapshotId) -> bool {
        self.entries.read().map(|e| e.contains_key(id)).unwrap_or(false)
    }

    pub fn ids(&self) -> Vec<SnapshotId> {
        self.entries.read().map(|e| e.keys().cloned().collect()).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().map(|e| e.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Overwrites stored bytes without re-hashing. Only for corruption tests.
    #[doc(hidden)]
    pub fn tamper(&self, id: &SnapshotId, bytes: Vec<u8>) {
        if let Ok(mut entries) = self.entries.write() {
            entries.insert(id.clone(), Arc::from(bytes));
        }
    }
}

pub fn snapshot(store: &SnapshotStore, ctx: &OperationalContext) -> Result<SnapshotId, StateError> {
    store.snapshot(ctx)
}

pub fn restore(store: &SnapshotStore, id: &SnapshotId) -> Result<OperationalContext, StateError> {
    store.restore(id)
}

fn storage(e: std::io::Error) -> StateError {
    StateError::StorageFailure(e.to_string())
}

fn poisoned() -> StateError {
    StateError::StorageFailure("snapshot store lock poisoned".into())
}
