use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::state::hash_bytes;

pub const MOCK_SIM_BACKEND: &str = "mock-sim";

/// Builtin object assets: category and metric bounding extent `[x, y, z]`.
const BUILTIN_ASSETS: &[(&str, [f64; 3])] = &[
    ("apple", [0.08, 0.08, 0.08]),
    ("banana", [0.2, 0.04, 0.04]),
    ("bottle", [0.07, 0.07, 0.25]),
    ("bowl", [0.16, 0.16, 0.07]),
    ("box", [0.3, 0.2, 0.15]),
    ("cabinet", [0.6, 0.45, 1.0]),
    ("cube", [0.05, 0.05, 0.05]),
    ("laptop", [0.33, 0.23, 0.02]),
    ("mug", [0.08, 0.08, 0.1]),
    ("plate", [0.25, 0.25, 0.02]),
    ("shelf", [0.8, 0.3, 1.2]),
    ("sponge", [0.1, 0.07, 0.03]),
    ("table", [1.2, 0.8, 0.75]),
];

/// Third-party catalog entries used when no catalog directory is configured.
const DEFAULT_CATALOG: &[(&str, f64, &str, &str)] = &[
    ("drill", 25.0, "cm", "z"),
    ("plant", 40.0, "cm", "y"),
    ("rare_lamp", 45.0, "cm", "z"),
    ("teapot", 180.0, "mm", "y"),
];

const ROBOTS: &[(&str, usize)] = &[("aloha", 14), ("franka", 7), ("piper", 6), ("ur5", 6)];
const BENCHMARKS: &[&str] = &["libero", "robotwin", "simplerenv"];
const STUB_MODELS: &[&str] = &["act", "dp", "rdt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetOrigin {
    Builtin,
    Ingested,
}

/// Canonical form every registered asset is brought to: metric extent,
/// unit scale, `+Z` up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDescriptor {
    pub extent_m: [f64; 3],
    pub scale: f64,
    pub up_axis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub id: String,
    pub category: String,
    pub source: AssetOrigin,
    pub descriptor: NormalizedDescriptor,
    pub content_hash: String,
    /// Backend id -> registered.
    pub registrations: BTreeMap<String, bool>,
}

impl AssetRecord {
    pub fn registered_on(&self, backend: &str) -> bool {
        self.registrations.get(backend).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawExtent {
    Uniform(f64),
    Box([f64; 3]),
}

/// Descriptor as supplied by a source, before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAssetDescriptor {
    pub category: String,
    pub extent: RawExtent,
    #[serde(default = "default_unit")]
    pub unit: String,
    #[serde(default = "default_up")]
    pub up_axis: String,
}

fn default_unit() -> String {
    "m".into()
}

fn default_up() -> String {
    "z".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceDescriptor {
    /// A builtin catalog entry, by category.
    Builtin { category: String },
    /// A descriptor JSON file on disk; an optional `payload` file may sit next to it.
    LocalFile { path: PathBuf },
    /// An entry of the configured third-party catalog, by category.
    Catalog { category: String },
}

/// Normalizes a raw descriptor: unit conversion to meters and `+Y` up to `+Z` up.
pub fn normalize(raw: &RawAssetDescriptor) -> Result<NormalizedDescriptor, AdapterError> {
    let factor = match raw.unit.as_str() {
        "m" => 1.0,
        "cm" => 0.01,
        "mm" => 0.001,
        "in" => 0.0254,
        other => return Err(AdapterError::NormalizationFailure(format!("unknown unit {other:?}"))),
    };
    let mut e = match raw.extent {
        RawExtent::Uniform(v) => [v; 3],
        RawExtent::Box(b) => b,
    };
    if e.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(AdapterError::NormalizationFailure(format!("non-positive extent {:?}", e)));
    }
    for v in &mut e {
        *v *= factor;
    }
    match raw.up_axis.as_str() {
        "z" => {}
        "y" => e.swap(1, 2),
        other => return Err(AdapterError::NormalizationFailure(format!("unsupported up axis {other:?}"))),
    }
    Ok(NormalizedDescriptor { extent_m: e, scale: 1.0, up_axis: "z".into() })
}

/// Catalog of executable references: object assets, robot models,
/// benchmarks and pretrained stub models.
#[derive(Debug, Clone)]
pub struct AssetLibrary {
    records: BTreeMap<String, AssetRecord>,
    store_dir: Option<PathBuf>,
    catalog_dir: Option<PathBuf>,
    robots: BTreeMap<String, usize>,
    benchmarks: BTreeSet<String>,
    models: BTreeSet<String>,
}

impl Default for AssetLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl AssetLibrary {
    pub fn builtin() -> Self {
        let mut records = BTreeMap::new();
        for (category, extent) in BUILTIN_ASSETS {
            let id = format!("{category}_01");
            let descriptor = NormalizedDescriptor { extent_m: *extent, scale: 1.0, up_axis: "z".into() };
            let content_hash = hash_bytes(&serde_json::to_vec(&descriptor).expect("descriptor serializes"));
            records.insert(
                id.clone(),
                AssetRecord {
                    id,
                    category: category.to_string(),
                    source: AssetOrigin::Builtin,
                    descriptor,
                    content_hash,
                    registrations: BTreeMap::from([(MOCK_SIM_BACKEND.to_string(), true)]),
                },
            );
        }
        AssetLibrary {
            records,
            store_dir: None,
            catalog_dir: None,
            robots: ROBOTS.iter().map(|(m, j)| (m.to_string(), *j)).collect(),
            benchmarks: BENCHMARKS.iter().map(|b| b.to_string()).collect(),
            models: STUB_MODELS.iter().map(|m| m.to_string()).collect(),
        }
    }

    /// Builtin library plus every ingested asset persisted under `dir`
    /// (`<dir>/<id>/{descriptor.json, payload}`).
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, AdapterError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io)?;
        let mut lib = Self::builtin();
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir).map_err(io)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for entry in entries {
            let record_path = entry.join("record.json");
            if record_path.exists() {
                let bytes = fs::read(&record_path).map_err(io)?;
                let record: AssetRecord = serde_json::from_slice(&bytes)
                    .map_err(|e| AdapterError::SourceUnavailable(format!("{}: {e}", record_path.display())))?;
                lib.records.insert(record.id.clone(), record);
            }
        }
        lib.store_dir = Some(dir);
        Ok(lib)
    }

    pub fn with_catalog_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.catalog_dir = Some(dir.into());
        self
    }

    pub fn get(&self, id: &str) -> Option<&AssetRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &AssetRecord> {
        self.records.values()
    }

    /// Assets of a category, ordered by id.
    pub fn by_category<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a AssetRecord> + 'a {
        self.records.values().filter(move |r| r.category == category)
    }

    /// First asset of a category registered on `backend`, builtins first.
    pub fn match_category(&self, category: &str, backend: &str) -> Option<&AssetRecord> {
        let mut candidates: Vec<&AssetRecord> =
            self.records.values().filter(|r| r.category == category && r.registered_on(backend)).collect();
        candidates.sort_by_key(|r| (r.source != AssetOrigin::Builtin, r.id.clone()));
        candidates.into_iter().next()
    }

    pub fn categories(&self) -> BTreeSet<String> {
        self.records.values().map(|r| r.category.clone()).collect()
    }

    pub fn robot_joint_count(&self, model: &str) -> Option<usize> {
        self.robots.get(model).copied()
    }

    pub fn is_robot(&self, model: &str) -> bool {
        self.robots.contains_key(model)
    }

    pub fn robots(&self) -> impl Iterator<Item = &str> {
        self.robots.keys().map(String::as_str)
    }

    pub fn stub_models(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(String::as_str)
    }

    /// Categories of the builtin assets.
    pub fn builtin_categories() -> impl Iterator<Item = &'static str> {
        BUILTIN_ASSETS.iter().map(|(c, _)| *c)
    }

    pub fn is_benchmark(&self, id: &str) -> bool {
        self.benchmarks.contains(id)
    }

    pub fn benchmarks(&self) -> &BTreeSet<String> {
        &self.benchmarks
    }

    pub fn is_stub_model(&self, id: &str) -> bool {
        self.models.contains(id)
    }

    /// Categories the third-party catalog can supply.
    pub fn catalog_categories(&self) -> BTreeSet<String> {
        match &self.catalog_dir {
            None => DEFAULT_CATALOG.iter().map(|(c, ..)| c.to_string()).collect(),
            Some(dir) => {
                let mut out = BTreeSet::new();
                if let Ok(rd) = fs::read_dir(dir) {
                    for e in rd.flatten() {
                        if let Ok(bytes) = fs::read(e.path().join("descriptor.json")) {
                            if let Ok(raw) = serde_json::from_slice::<RawAssetDescriptor>(&bytes) {
                                out.insert(raw.category);
                            }
                        }
                    }
                }
                out
            }
        }
    }

    fn resolve_source(&self, source: &SourceDescriptor) -> Result<(RawAssetDescriptor, Vec<u8>, Vec<u8>), AdapterError> {
        match source {
            SourceDescriptor::Builtin { category } => {
                let rec = self
                    .by_category(category)
                    .find(|r| r.source == AssetOrigin::Builtin)
                    .ok_or_else(|| AdapterError::SourceUnavailable(format!("no builtin asset for {category}")))?;
                let raw = RawAssetDescriptor {
                    category: category.clone(),
                    extent: RawExtent::Box(rec.descriptor.extent_m),
                    unit: "m".into(),
                    up_axis: "z".into(),
                };
                let bytes = serde_json::to_vec(&raw).expect("descriptor serializes");
                Ok((raw, bytes, Vec::new()))
            }
            SourceDescriptor::LocalFile { path } => {
                let bytes = fs::read(path)
                    .map_err(|e| AdapterError::SourceUnavailable(format!("{}: {e}", path.display())))?;
                let raw: RawAssetDescriptor = serde_json::from_slice(&bytes)
                    .map_err(|e| AdapterError::SourceUnavailable(format!("{}: {e}", path.display())))?;
                let payload = path.parent().map(|p| p.join("payload")).and_then(|p| fs::read(p).ok()).unwrap_or_default();
                Ok((raw, bytes, payload))
            }
            SourceDescriptor::Catalog { category } => match &self.catalog_dir {
                None => {
                    let (cat, extent, unit, up) = DEFAULT_CATALOG
                        .iter()
                        .find(|(c, ..)| c == category)
                        .ok_or_else(|| AdapterError::SourceUnavailable(format!("catalog has no {category}")))?;
                    let raw = RawAssetDescriptor {
                        category: cat.to_string(),
                        extent: RawExtent::Uniform(*extent),
                        unit: unit.to_string(),
                        up_axis: up.to_string(),
                    };
                    let bytes = serde_json::to_vec(&raw).expect("descriptor serializes");
                    let payload = format!("mesh-placeholder:{cat}\n").into_bytes();
                    Ok((raw, bytes, payload))
                }
                Some(dir) => {
                    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
                        .map_err(|e| AdapterError::SourceUnavailable(format!("{}: {e}", dir.display())))?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .collect();
                    entries.sort();
                    for entry in entries {
                        let desc = entry.join("descriptor.json");
                        let Ok(bytes) = fs::read(&desc) else { continue };
                        let Ok(raw) = serde_json::from_slice::<RawAssetDescriptor>(&bytes) else { continue };
                        if raw.category == *category {
                            let payload = fs::read(entry.join("payload")).unwrap_or_default();
                            return Ok((raw, bytes, payload));
                        }
                    }
                    Err(AdapterError::SourceUnavailable(format!("catalog has no {category}")))
                }
            },
        }
    }

    /// The record `ingest` would produce, without registering anything.
    pub fn preview_ingest(&self, source: &SourceDescriptor, backend: &str) -> Result<AssetRecord, AdapterError> {
        Ok(self.prepare(source, backend)?.0)
    }

    fn prepare(&self, source: &SourceDescriptor, backend: &str) -> Result<(AssetRecord, Vec<u8>, Vec<u8>, bool), AdapterError> {
        let (raw, descriptor_bytes, payload) = self.resolve_source(source)?;
        let mut content = descriptor_bytes.clone();
        content.extend_from_slice(&payload);
        let content_hash = hash_bytes(&content);
        if let Some(existing) = self.records.values().find(|r| r.content_hash == content_hash) {
            let mut record = existing.clone();
            record.registrations.insert(backend.to_string(), true);
            return Ok((record, descriptor_bytes, payload, true));
        }
        if !raw.category.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') || raw.category.is_empty() {
            return Err(AdapterError::NormalizationFailure(format!("invalid category {:?}", raw.category)));
        }
        let descriptor = normalize(&raw)?;
        let record = AssetRecord {
            id: format!("{}_{}", raw.category, &content_hash[..8]),
            category: raw.category.clone(),
            source: AssetOrigin::Ingested,
            descriptor,
            content_hash,
            registrations: BTreeMap::from([(backend.to_string(), true)]),
        };
        Ok((record, descriptor_bytes, payload, false))
    }

    /// Copies, normalizes and registers an asset on `backend`. Idempotent
    /// per content hash: identical content yields the existing record.
    pub fn ingest(&mut self, source: &SourceDescriptor, backend: &str) -> Result<AssetRecord, AdapterError> {
        let (record, descriptor_bytes, payload, existed) = self.prepare(source, backend)?;
        if existed {
            self.persist(&record, None)?;
        } else {
            self.persist(&record, Some((&descriptor_bytes, &payload)))?;
        }
        self.records.insert(record.id.clone(), record.clone());
        Ok(record)
    }

    fn persist(&self, record: &AssetRecord, files: Option<(&[u8], &[u8])>) -> Result<(), AdapterError> {
        let Some(dir) = &self.store_dir else { return Ok(()) };
        let adir = dir.join(&record.id);
        fs::create_dir_all(&adir).map_err(io)?;
        if let Some((descriptor, payload)) = files {
            fs::write(adir.join("descriptor.json"), descriptor).map_err(io)?;
            fs::write(adir.join("payload"), payload).map_err(io)?;
        }
        let json = serde_json::to_vec_pretty(record).expect("record serializes");
        fs::write(adir.join("record.json"), json).map_err(io)
    }
}

fn io(e: std::io::Error) -> AdapterError {
    AdapterError::SourceUnavailable(e.to_string())
}
