//! Episodes and their export to, import from, and validation against the
//! four on-disk dataset layouts.

mod formats;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{hash_bytes, quat_norm, Pose, QUAT_STORAGE_TOLERANCE};

pub use formats::{canonical_episodes, encode, MANIFEST_FILE};

pub const SCHEMA_VERSION: u32 = 1;

pub type EpisodeSet = Vec<Episode>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unsupported format {0:?}")]
    UnsupportedFormat(String),
    #[error("write failure at {path}: {reason}")]
    WriteFailure { path: String, reason: String },
    #[error("checksum mismatch in {file}")]
    ChecksumMismatch { file: String },
    #[error("schema violation in {file} at {field_path}: {rule}")]
    SchemaViolation { file: String, field_path: String, rule: String },
    #[error("invalid episode {episode}: {detail}")]
    InvalidEpisode { episode: String, detail: String },
}

/// One recorded timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub timestep: i64,
    /// Joint positions in radians.
    pub joints: Vec<f64>,
    pub ee_pose: Pose,
    /// Gripper opening in `[0, 1]`.
    pub gripper: f64,
    pub frame_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub task_id: String,
    pub seed: u64,
    pub steps: Vec<Step>,
    pub success: bool,
    pub length: u64,
}

impl Episode {
    pub fn joint_dim(&self) -> usize {
        self.steps.first().map(|s| s.joints.len()).unwrap_or(0)
    }

    /// Invariant violations as `(field path, rule, detail)`.
    pub fn violations(&self) -> Vec<(String, &'static str, String)> {
        let mut out = Vec::new();
        if self.length != self.steps.len() as u64 {
            out.push((
                "length".to_string(),
                "length-matches",
                format!("length {} but {} steps", self.length, self.steps.len()),
            ));
        }
        let dim = self.joint_dim();
        let mut prev: Option<i64> = None;
        for (i, s) in self.steps.iter().enumerate() {
            let ok = match prev {
                None => s.timestep == 0,
                Some(p) => s.timestep > p,
            };
            if !ok {
                out.push((
                    format!("steps[{i}].timestep"),
                    "timestep-monotone",
                    format!("timestep {} after {:?}", s.timestep, prev),
                ));
            }
            prev = Some(s.timestep);
            if s.joints.len() != dim {
                out.push((format!("steps[{i}].joints"), "joint-dim-constant", format!("{} != {dim}", s.joints.len())));
            } else if s.joints.iter().any(|j| !j.is_finite()) {
                out.push((format!("steps[{i}].joints"), "finite-number", "non-finite joint".into()));
            }
            let pose_finite = s.ee_pose.position.iter().chain(&s.ee_pose.orientation).all(|c| c.is_finite());
            if !pose_finite {
                out.push((format!("steps[{i}].ee_pose"), "finite-number", "non-finite pose".into()));
            } else if (quat_norm(&s.ee_pose.orientation) - 1.0).abs() > QUAT_STORAGE_TOLERANCE {
                out.push((format!("steps[{i}].ee_pose"), "quaternion-unit-norm", "orientation not unit".into()));
            }
            if !(0.0..=1.0).contains(&s.gripper) {
                out.push((format!("steps[{i}].gripper"), "gripper-range", format!("{} outside [0,1]", s.gripper)));
            }
            if !valid_token(&s.frame_ref) {
                out.push((format!("steps[{i}].frame_ref"), "frame-ref-charset", format!("{:?}", s.frame_ref)));
            }
        }
        for (name, value) in [("id", &self.id), ("task_id", &self.task_id)] {
            if !valid_token(value) {
                out.push((name.to_string(), "identifier-charset", format!("{value:?}")));
            }
        }
        out
    }

    /// Number of in-schema fields checked for this episode.
    pub(crate) fn field_count(&self) -> usize {
        5 + 5 * self.steps.len()
    }
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"_./:-".contains(&b))
}

/// The four logical dataset layouts, in the order hierarchical container,
/// per-episode folder, sequential record stream, video stub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FormatId {
    #[serde(rename = "hierarchical-container")]
    HierarchicalContainer,
    #[serde(rename = "episode-folder")]
    EpisodeFolder,
    #[serde(rename = "sequential-record")]
    SequentialRecord,
    #[serde(rename = "video-stub")]
    VideoStub,
}

impl FormatId {
    pub const ALL: [FormatId; 4] =
        [FormatId::HierarchicalContainer, FormatId::EpisodeFolder, FormatId::SequentialRecord, FormatId::VideoStub];

    pub fn as_str(self) -> &'static str {
        match self {
            FormatId::HierarchicalContainer => "hierarchical-container",
            FormatId::EpisodeFolder => "episode-folder",
            FormatId::SequentialRecord => "sequential-record",
            FormatId::VideoStub => "video-stub",
        }
    }
}

impl FromStr for FormatId {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FormatId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| DataError::UnsupportedFormat(s.to_string()))
    }
}

impl fmt::Display for FormatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Path relative to the manifest root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub format: FormatId,
    pub schema_version: u32,
    pub episode_ids: Vec<String>,
    /// Directory the files were written to.
    pub root: String,
    pub files: Vec<ManifestFile>,
}

impl ExportManifest {
    pub fn root(&self) -> PathBuf {
        PathBuf::from(&self.root)
    }

    /// Builds a manifest for files already present under `root`.
    pub fn from_files(
        format: FormatId,
        root: &Path,
        episode_ids: Vec<String>,
        paths: &[String],
    ) -> Result<Self, DataError> {
        let mut files = Vec::with_capacity(paths.len());
        for p in paths {
            let bytes = fs::read(root.join(p)).map_err(|e| DataError::WriteFailure { path: p.clone(), reason: e.to_string() })?;
            files.push(ManifestFile { path: p.clone(), sha256: hash_bytes(&bytes) });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut episode_ids = episode_ids;
        episode_ids.sort();
        Ok(ExportManifest {
            format,
            schema_version: SCHEMA_VERSION,
            episode_ids,
            root: root.to_string_lossy().into_owned(),
            files,
        })
    }
}

/// A schema problem found in an exported file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatViolation {
    pub file: String,
    pub field_path: String,
    pub rule: String,
    pub detail: String,
}

/// Result of validating a manifest: violations plus the number of
/// fields that were checked.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatReport {
    pub violations: Vec<FormatViolation>,
    pub fields_checked: usize,
}

impl FormatReport {
    /// Violations over checked fields, clipped to `[0, 1]`.
    pub fn ratio(&self) -> f64 {
        if self.violations.is_empty() {
            return 0.0;
        }
        if self.fields_checked == 0 {
            return 1.0;
        }
        (self.violations.len() as f64 / self.fields_checked as f64).min(1.0)
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Writes `episodes` under `destination` in the given layout.
///
/// Output bytes are a pure function of the episode contents.
pub fn export(episodes: &[Episode], format: FormatId, destination: &Path) -> Result<ExportManifest, DataError> {
    let mut sorted: Vec<Episode> = episodes.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = BTreeSet::new();
    for ep in &sorted {
        if !seen.insert(ep.id.as_str()) {
            return Err(DataError::InvalidEpisode { episode: ep.id.clone(), detail: "duplicate episode id".into() });
        }
        if let Some((path, rule, detail)) = ep.violations().into_iter().next() {
            return Err(DataError::InvalidEpisode { episode: ep.id.clone(), detail: format!("{path} [{rule}]: {detail}") });
        }
    }
    let files = encode(&sorted, format);
    let write_err = |path: &Path, e: std::io::Error| DataError::WriteFailure {
        path: path.to_string_lossy().into_owned(),
        reason: e.to_string(),
    };
    fs::create_dir_all(destination).map_err(|e| write_err(destination, e))?;
    let mut manifest_files = Vec::with_capacity(files.len());
    for (rel, bytes) in &files {
        let path = destination.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| write_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| write_err(&path, e))?;
        manifest_files.push(ManifestFile { path: rel.clone(), sha256: hash_bytes(bytes) });
    }
    manifest_files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = ExportManifest {
        format,
        schema_version: SCHEMA_VERSION,
        episode_ids: sorted.iter().map(|e| e.id.clone()).collect(),
        root: destination.to_string_lossy().into_owned(),
        files: manifest_files,
    };
    let manifest_path = destination.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&ManifestOnDisk::from(&manifest)).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|e| write_err(&manifest_path, e))?;
    Ok(manifest)
}

/// On-disk manifest; the root is implied by the file's location.
#[derive(Serialize, Deserialize)]
struct ManifestOnDisk {
    format: FormatId,
    schema_version: u32,
    episode_ids: Vec<String>,
    files: Vec<ManifestFile>,
}

impl From<&ExportManifest> for ManifestOnDisk {
    fn from(m: &ExportManifest) -> Self {
        ManifestOnDisk {
            format: m.format,
            schema_version: m.schema_version,
            episode_ids: m.episode_ids.clone(),
            files: m.files.clone(),
        }
    }
}

/// Loads the manifest written by [`export`] from a directory.
pub fn read_manifest(root: &Path) -> Result<ExportManifest, DataError> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| DataError::SchemaViolation {
        file: MANIFEST_FILE.into(),
        field_path: "".into(),
        rule: format!("file-present: {e}"),
    })?;
    let m: ManifestOnDisk = serde_json::from_slice(&bytes).map_err(|e| DataError::SchemaViolation {
        file: MANIFEST_FILE.into(),
        field_path: "".into(),
        rule: format!("manifest-parse: {e}"),
    })?;
    Ok(ExportManifest {
        format: m.format,
        schema_version: m.schema_version,
        episode_ids: m.episode_ids,
        root: root.to_string_lossy().into_owned(),
        files: m.files,
    })
}

fn read_file(manifest: &ExportManifest, rel: &str) -> Option<Vec<u8>> {
    fs::read(manifest.root().join(rel)).ok()
}

/// Reconstructs the episodes behind a manifest. Checksums are verified
/// before any file is decoded.
pub fn import(manifest: &ExportManifest) -> Result<EpisodeSet, DataError> {
    for f in &manifest.files {
        match read_file(manifest, &f.path) {
            Some(bytes) if hash_bytes(&bytes) == f.sha256 => {}
            _ => return Err(DataError::ChecksumMismatch { file: f.path.clone() }),
        }
    }
    let outcome = formats::decode(manifest, &|p| read_file(manifest, p));
    if let Some(v) = outcome.violations.first() {
        return Err(DataError::SchemaViolation {
            file: v.file.clone(),
            field_path: v.field_path.clone(),
            rule: v.rule.clone(),
        });
    }
    let mut episodes = Vec::with_capacity(outcome.episodes.len());
    for (file, ep) in outcome.episodes {
        if let Some((path, rule, _)) = ep.violations().into_iter().next() {
            return Err(DataError::SchemaViolation {
                file,
                field_path: format!("episodes[{}].{path}", ep.id),
                rule: rule.to_string(),
            });
        }
        episodes.push(ep);
    }
    episodes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(episodes)
}

/// Checks every file of a manifest against its layout schema.
///
/// Counts one field per file checksum, one per covered episode id and
/// the in-schema fields of every decoded episode.
pub fn validate_format(manifest: &ExportManifest) -> FormatReport {
    let mut report = FormatReport::default();
    for f in &manifest.files {
        report.fields_checked += 1;
        match read_file(manifest, &f.path) {
            None => report.violations.push(FormatViolation {
                file: f.path.clone(),
                field_path: String::new(),
                rule: "file-present".into(),
                detail: "file missing".into(),
            }),
            Some(bytes) if hash_bytes(&bytes) != f.sha256 => report.violations.push(FormatViolation {
                file: f.path.clone(),
                field_path: String::new(),
                rule: "checksum-match".into(),
                detail: "sha256 differs from manifest".into(),
            }),
            Some(_) => {}
        }
    }
    if manifest.schema_version != SCHEMA_VERSION {
        report.fields_checked += 1;
        report.violations.push(FormatViolation {
            file: MANIFEST_FILE.into(),
            field_path: "schema_version".into(),
            rule: "schema-version".into(),
            detail: format!("{} != {SCHEMA_VERSION}", manifest.schema_version),
        });
    }
    let outcome = formats::decode(manifest, &|p| read_file(manifest, p));
    report.fields_checked += outcome.structural_fields;
    report.violations.extend(outcome.violations);
    let decoded: BTreeSet<String> = outcome.episodes.iter().map(|(_, e)| e.id.clone()).collect();
    for id in &manifest.episode_ids {
        report.fields_checked += 1;
        if !decoded.contains(id) {
            report.violations.push(FormatViolation {
                file: MANIFEST_FILE.into(),
                field_path: format!("episode_ids[{id}]"),
                rule: "episode-covered".into(),
                detail: "episode listed in manifest but not decodable".into(),
            });
        }
    }
    for (file, ep) in &outcome.episodes {
        report.fields_checked += ep.field_count();
        for (path, rule, detail) in ep.violations() {
            report.violations.push(FormatViolation {
                file: file.clone(),
                field_path: format!("episodes[{}].{path}", ep.id),
                rule: rule.to_string(),
                detail,
            });
        }
    }
    report
}
