//! Byte layouts of the four export formats. `docs/formats.md` is the
//! field-level reference; keep the two in sync.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Episode, ExportManifest, FormatId, FormatViolation, Step};
use crate::state::Pose;

pub const MANIFEST_FILE: &str = "manifest.json";

const VERSION: u8 = 1;
const HCF_MAGIC: &[u8; 4] = b"CLHC";
const HCF_FILE: &str = "dataset.hcf";
const SRS_MAGIC: &[u8; 4] = b"CLSR";
const SRS_FILE: &str = "records.srs";
const VIX_MAGIC: &[u8; 4] = b"CLVX";
const PLACEHOLDER_PREFIX: &[u8] = b"CLAW-FRAME-PLACEHOLDER\n";

const DT_I64: u8 = 1;
const DT_F64: u8 = 2;
const DT_U8: u8 = 3;
const DT_UTF8: u8 = 4;
const DT_U64: u8 = 5;

pub(crate) struct DecodeOutcome {
    pub episodes: Vec<(String, Episode)>,
    pub violations: Vec<FormatViolation>,
    pub structural_fields: usize,
}

impl DecodeOutcome {
    fn new() -> Self {
        DecodeOutcome { episodes: Vec::new(), violations: Vec::new(), structural_fields: 0 }
    }

    fn violation(&mut self, file: &str, field_path: impl Into<String>, rule: &str, detail: impl Into<String>) {
        self.structural_fields += 1;
        self.violations.push(FormatViolation {
            file: file.to_string(),
            field_path: field_path.into(),
            rule: rule.to_string(),
            detail: detail.into(),
        });
    }
}

/// Encodes episodes (assumed sorted by id) into `(relative path, bytes)` pairs.
/// Performs no validation, so it can also produce deliberately broken files.
pub fn encode(episodes: &[Episode], format: FormatId) -> Vec<(String, Vec<u8>)> {
    match format {
        FormatId::HierarchicalContainer => vec![(HCF_FILE.to_string(), encode_container(episodes))],
        FormatId::EpisodeFolder => encode_folder(episodes),
        FormatId::SequentialRecord => vec![(SRS_FILE.to_string(), encode_records(episodes))],
        FormatId::VideoStub => encode_video(episodes),
    }
}

pub(crate) fn decode(manifest: &ExportManifest, read: &dyn Fn(&str) -> Option<Vec<u8>>) -> DecodeOutcome {
    match manifest.format {
        FormatId::HierarchicalContainer => decode_container(read),
        FormatId::EpisodeFolder => decode_folder(read),
        FormatId::SequentialRecord => decode_records(read),
        FormatId::VideoStub => decode_video(manifest, read),
    }
}

fn pose_array(p: &Pose) -> [f64; 7] {
    let [x, y, z] = p.position;
    let [qw, qx, qy, qz] = p.orientation;
    [x, y, z, qw, qx, qy, qz]
}

fn pose_from(a: &[f64]) -> Pose {
    Pose { position: [a[0], a[1], a[2]], orientation: [a[3], a[4], a[5], a[6]] }
}

// Little-endian primitive writer / reader shared by the binary layouts.

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str16(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("unexpected end of data at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, String> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str16(&mut self) -> Result<String, String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn check_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<(), (&'static str, String)> {
    match r.take(4) {
        Ok(m) if m == magic => {}
        _ => return Err(("magic", format!("expected {:?}", String::from_utf8_lossy(magic)))),
    }
    match r.u8() {
        Ok(VERSION) => Ok(()),
        Ok(v) => Err(("version-byte", format!("unsupported version {v}"))),
        Err(e) => Err(("version-byte", e)),
    }
}

// ---------------------------------------------------------------------------
// hierarchical-container

struct Dataset {
    dtype: u8,
    dims: Vec<u64>,
    payload: Vec<u8>,
}

fn push_dataset(w: &mut Writer, path: &str, dtype: u8, dims: &[u64], payload: Vec<u8>) {
    w.str16(path);
    w.u8(dtype);
    w.u8(dims.len() as u8);
    for d in dims {
        w.u64(*d);
    }
    w.u64(payload.len() as u64);
    w.0.extend(payload);
}

fn utf8_payload<'a>(items: impl Iterator<Item = &'a str>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    for s in items {
        w.u32(s.len() as u32);
        w.0.extend_from_slice(s.as_bytes());
    }
    w.0
}

fn encode_container(episodes: &[Episode]) -> Vec<u8> {
    let mut body = Writer(Vec::new());
    let mut count = 0u32;
    for ep in episodes {
        let base = format!("/episodes/{}", ep.id);
        let l = ep.steps.len() as u64;
        let j = ep.joint_dim() as u64;
        push_dataset(&mut body, &format!("{base}/task_id"), DT_UTF8, &[1], utf8_payload([ep.task_id.as_str()].into_iter()));
        push_dataset(&mut body, &format!("{base}/seed"), DT_U64, &[1], ep.seed.to_le_bytes().to_vec());
        push_dataset(&mut body, &format!("{base}/success"), DT_U8, &[1], vec![ep.success as u8]);
        push_dataset(&mut body, &format!("{base}/length"), DT_U64, &[1], ep.length.to_le_bytes().to_vec());
        let ts: Vec<u8> = ep.steps.iter().flat_map(|s| s.timestep.to_le_bytes()).collect();
        push_dataset(&mut body, &format!("{base}/timestep"), DT_I64, &[l], ts);
        let joints: Vec<u8> = ep.steps.iter().flat_map(|s| s.joints.iter().flat_map(|v| v.to_le_bytes())).collect();
        push_dataset(&mut body, &format!("{base}/joints"), DT_F64, &[l, j], joints);
        let ee: Vec<u8> = ep.steps.iter().flat_map(|s| pose_array(&s.ee_pose).into_iter().flat_map(f64::to_le_bytes)).collect();
        push_dataset(&mut body, &format!("{base}/ee_pose"), DT_F64, &[l, 7], ee);
        let grip: Vec<u8> = ep.steps.iter().flat_map(|s| s.gripper.to_le_bytes()).collect();
        push_dataset(&mut body, &format!("{base}/gripper"), DT_F64, &[l], grip);
        push_dataset(&mut body, &format!("{base}/frame_ref"), DT_UTF8, &[l], utf8_payload(ep.steps.iter().map(|s| s.frame_ref.as_str())));
        count += 9;
    }
    let mut w = Writer(Vec::with_capacity(body.0.len() + 9));
    w.0.extend_from_slice(HCF_MAGIC);
    w.u8(VERSION);
    w.u32(count);
    w.0.extend(body.0);
    w.0
}

fn decode_container(read: &dyn Fn(&str) -> Option<Vec<u8>>) -> DecodeOutcome {
    let mut out = DecodeOutcome::new();
    let Some(bytes) = read(HCF_FILE) else {
        out.violation(HCF_FILE, "", "file-present", "container file missing");
        return out;
    };
    let mut r = Reader::new(&bytes);
    if let Err((rule, detail)) = check_header(&mut r, HCF_MAGIC) {
        out.violation(HCF_FILE, "", rule, detail);
        return out;
    }
    let mut tree: BTreeMap<String, BTreeMap<String, Dataset>> = BTreeMap::new();
    let parsed = (|| -> Result<(), String> {
        let n = r.u32()?;
        for _ in 0..n {
            let path = r.str16()?;
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u64()?);
            }
            let len = r.u64()? as usize;
            let payload = r.take(len)?.to_vec();
            let parts: Vec<&str> = path.trim_start_matches('/').split('/').collect();
            match parts.as_slice() {
                ["episodes", id, field] => {
                    tree.entry(id.to_string())
                        .or_default()
                        .insert(field.to_string(), Dataset { dtype, dims, payload });
                }
                _ => return Err(format!("unexpected dataset path {path}")),
            }
        }
        if !r.done() {
            return Err(format!("trailing bytes at {}", r.pos));
        }
        Ok(())
    })();
    if let Err(e) = parsed {
        out.violation(HCF_FILE, "", "parse-error", e);
        return out;
    }
    for (id, fields) in tree {
        match container_episode(&id, &fields) {
            Ok(ep) => out.episodes.push((HCF_FILE.to_string(), ep)),
            Err((field, rule, detail)) => out.violation(HCF_FILE, format!("episodes[{id}].{field}"), rule, detail),
        }
    }
    out
}

type FieldError = (String, &'static str, String);

fn container_episode(id: &str, fields: &BTreeMap<String, Dataset>) -> Result<Episode, FieldError> {
    let get = |name: &str, dtype: u8| -> Result<&Dataset, FieldError> {
        let d = fields.get(name).ok_or_else(|| (name.to_string(), "field-present", "dataset missing".to_string()))?;
        if d.dtype != dtype {
            return Err((name.to_string(), "dtype", format!("expected dtype {dtype}, found {}", d.dtype)));
        }
        Ok(d)
    };
    let shape_err = |name: &str| (name.to_string(), "shape", "payload does not match dims".to_string());
    let numbers = |name: &str, d: &Dataset| -> Result<Vec<[u8; 8]>, FieldError> {
        let count: u64 = d.dims.iter().product();
        if d.payload.len() as u64 != count * 8 {
            return Err(shape_err(name));
        }
        Ok(d.payload.chunks_exact(8).map(|c| c.try_into().unwrap()).collect())
    };
    let strings = |name: &str, d: &Dataset| -> Result<Vec<String>, FieldError> {
        let mut r = Reader::new(&d.payload);
        let count: u64 = d.dims.iter().product();
        let mut v = Vec::new();
        for _ in 0..count {
            let n = r.u32().map_err(|_| shape_err(name))? as usize;
            let s = r.take(n).map_err(|_| shape_err(name))?;
            v.push(String::from_utf8(s.to_vec()).map_err(|_| (name.to_string(), "utf8", "invalid utf-8".to_string()))?);
        }
        if !r.done() {
            return Err(shape_err(name));
        }
        Ok(v)
    };

    let task = strings("task_id", get("task_id", DT_UTF8)?)?;
    let seed = numbers("seed", get("seed", DT_U64)?)?;
    let success = get("success", DT_U8)?;
    let length = numbers("length", get("length", DT_U64)?)?;
    let ts = get("timestep", DT_I64)?;
    let joints = get("joints", DT_F64)?;
    let ee = get("ee_pose", DT_F64)?;
    let grip = get("gripper", DT_F64)?;
    let frames = get("frame_ref", DT_UTF8)?;
    if task.len() != 1 || seed.len() != 1 || length.len() != 1 || success.payload.len() != 1 {
        return Err(("attrs".into(), "shape", "scalar attribute with wrong size".into()));
    }
    let l = ts.dims.first().copied().unwrap_or(0) as usize;
    if joints.dims.len() != 2 || joints.dims[0] as usize != l {
        return Err(shape_err("joints"));
    }
    if ee.dims != [l as u64, 7] {
        return Err(shape_err("ee_pose"));
    }
    if grip.dims != [l as u64] || frames.dims != [l as u64] {
        return Err(shape_err("gripper"));
    }
    let jd = joints.dims[1] as usize;
    let ts = numbers("timestep", ts)?;
    let joints = numbers("joints", joints)?;
    let ee = numbers("ee_pose", ee)?;
    let grip = numbers("gripper", grip)?;
    let frames = strings("frame_ref", frames)?;
    if ts.len() != l {
        return Err(shape_err("timestep"));
    }
    let steps = (0..l)
        .map(|i| {
            let e: Vec<f64> = ee[i * 7..i * 7 + 7].iter().map(|b| f64::from_le_bytes(*b)).collect();
            Step {
                timestep: i64::from_le_bytes(ts[i]),
                joints: joints[i * jd..(i + 1) * jd].iter().map(|b| f64::from_le_bytes(*b)).collect(),
                ee_pose: pose_from(&e),
                gripper: f64::from_le_bytes(grip[i]),
                frame_ref: frames[i].clone(),
            }
        })
        .collect();
    Ok(Episode {
        id: id.to_string(),
        task_id: task[0].clone(),
        seed: u64::from_le_bytes(seed[0]),
        steps,
        success: success.payload[0] != 0,
        length: u64::from_le_bytes(length[0]),
    })
}

// ---------------------------------------------------------------------------
// episode-folder

#[derive(Serialize, Deserialize)]
struct FolderInfo {
    format: String,
    version: u8,
    episodes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct FolderMeta {
    episode_id: String,
    task_id: String,
    seed: u64,
    success: bool,
    length: u64,
    joint_dim: usize,
}

fn folder_dir(index: usize) -> String {
    format!("episodes/{index:06}")
}

fn steps_header(joint_dim: usize) -> Vec<String> {
    let mut cols = vec!["timestep".to_string()];
    cols.extend((0..joint_dim).map(|i| format!("joint_{i}")));
    cols.extend(["ee_px", "ee_py", "ee_pz", "ee_qw", "ee_qx", "ee_qy", "ee_qz", "gripper", "frame_ref"].map(String::from));
    cols
}

fn encode_folder(episodes: &[Episode]) -> Vec<(String, Vec<u8>)> {
    let info = FolderInfo {
        format: FormatId::EpisodeFolder.as_str().into(),
        version: VERSION,
        episodes: episodes.iter().map(|e| e.id.clone()).collect(),
    };
    let mut files = vec![("meta/info.json".to_string(), serde_json::to_vec(&info).expect("info serializes"))];
    for (i, ep) in episodes.iter().enumerate() {
        let dir = folder_dir(i);
        let meta = FolderMeta {
            episode_id: ep.id.clone(),
            task_id: ep.task_id.clone(),
            seed: ep.seed,
            success: ep.success,
            length: ep.length,
            joint_dim: ep.joint_dim(),
        };
        files.push((format!("{dir}/metadata.json"), serde_json::to_vec(&meta).expect("meta serializes")));
        let mut csv = steps_header(ep.joint_dim()).join(",");
        csv.push('\n');
        for s in &ep.steps {
            let mut row = vec![s.timestep.to_string()];
            row.extend(s.joints.iter().map(|v| format!("{v:?}")));
            row.extend(pose_array(&s.ee_pose).iter().map(|v| format!("{v:?}")));
            row.push(format!("{:?}", s.gripper));
            row.push(s.frame_ref.clone());
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        files.push((format!("{dir}/steps.csv"), csv.into_bytes()));
    }
    files
}

fn decode_folder(read: &dyn Fn(&str) -> Option<Vec<u8>>) -> DecodeOutcome {
    let mut out = DecodeOutcome::new();
    let info_path = "meta/info.json";
    let info: FolderInfo = match read(info_path).map(|b| serde_json::from_slice::<FolderInfo>(&b)) {
        Some(Ok(info)) => info,
        Some(Err(e)) => {
            out.violation(info_path, "", "parse-error", e.to_string());
            return out;
        }
        None => {
            out.violation(info_path, "", "file-present", "info file missing");
            return out;
        }
    };
    if info.version != VERSION {
        out.violation(info_path, "version", "version-byte", format!("unsupported version {}", info.version));
        return out;
    }
    for (i, id) in info.episodes.iter().enumerate() {
        let dir = folder_dir(i);
        let meta_path = format!("{dir}/metadata.json");
        let meta: FolderMeta = match read(&meta_path).map(|b| serde_json::from_slice::<FolderMeta>(&b)) {
            Some(Ok(m)) => m,
            Some(Err(e)) => {
                out.violation(&meta_path, format!("episodes[{id}]"), "parse-error", e.to_string());
                continue;
            }
            None => {
                out.violation(&meta_path, format!("episodes[{id}]"), "file-present", "metadata missing");
                continue;
            }
        };
        if meta.episode_id != *id {
            out.violation(&meta_path, format!("episodes[{id}].id"), "episode-id-matches", meta.episode_id.clone());
            continue;
        }
        let steps_path = format!("{dir}/steps.csv");
        let Some(bytes) = read(&steps_path) else {
            out.violation(&steps_path, format!("episodes[{id}].steps"), "file-present", "steps table missing");
            continue;
        };
        match folder_steps(&bytes, meta.joint_dim) {
            Ok(steps) => out.episodes.push((
                steps_path,
                Episode {
                    id: meta.episode_id,
                    task_id: meta.task_id,
                    seed: meta.seed,
                    steps,
                    success: meta.success,
                    length: meta.length,
                },
            )),
            Err((field, rule, detail)) => out.violation(&steps_path, format!("episodes[{id}].steps.{field}"), rule, detail),
        }
    }
    out
}

fn folder_steps(bytes: &[u8], joint_dim: usize) -> Result<Vec<Step>, FieldError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ("".to_string(), "utf8", e.to_string()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let expected = steps_header(joint_dim);
    let mut col = BTreeMap::new();
    for name in &expected {
        match header.iter().position(|h| h == name) {
            Some(i) => {
                col.insert(name.as_str(), i);
            }
            None => return Err((name.clone(), "field-present", "column missing".into())),
        }
    }
    let mut steps = Vec::new();
    for (row_idx, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err((format!("row[{row_idx}]"), "row-width", format!("{} cells", cells.len())));
        }
        let num = |name: &str| -> Result<f64, FieldError> {
            cells[col[name]]
                .parse::<f64>()
                .map_err(|e| (format!("row[{row_idx}].{name}"), "number", e.to_string()))
        };
        let timestep = cells[col["timestep"]]
            .parse::<i64>()
            .map_err(|e| (format!("row[{row_idx}].timestep"), "integer", e.to_string()))?;
        let joints = (0..joint_dim).map(|i| num(&format!("joint_{i}"))).collect::<Result<Vec<_>, _>>()?;
        let ee = ["ee_px", "ee_py", "ee_pz", "ee_qw", "ee_qx", "ee_qy", "ee_qz"]
            .iter()
            .map(|n| num(n))
            .collect::<Result<Vec<_>, _>>()?;
        steps.push(Step {
            timestep,
            joints,
            ee_pose: pose_from(&ee),
            gripper: num("gripper")?,
            frame_ref: cells[col["frame_ref"]].to_string(),
        });
    }
    Ok(steps)
}

// ---------------------------------------------------------------------------
// sequential-record

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Episode {
        episode_id: String,
        task_id: String,
        seed: u64,
        success: bool,
        length: u64,
    },
    Step {
        episode_id: String,
        timestep: i64,
        joints: Vec<f64>,
        ee_pose: [f64; 7],
        gripper: f64,
        frame_ref: String,
        is_first: bool,
        is_last: bool,
    },
}

fn push_frame(w: &mut Writer, record: &Record) {
    let payload = serde_json::to_vec(record).expect("record serializes");
    w.u64(payload.len() as u64);
    w.u32(crc32fast::hash(&payload));
    w.0.extend(payload);
}

fn encode_records(episodes: &[Episode]) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(SRS_MAGIC);
    w.u8(VERSION);
    for ep in episodes {
        push_frame(
            &mut w,
            &Record::Episode {
                episode_id: ep.id.clone(),
                task_id: ep.task_id.clone(),
                seed: ep.seed,
                success: ep.success,
                length: ep.length,
            },
        );
        let n = ep.steps.len();
        for (i, s) in ep.steps.iter().enumerate() {
            push_frame(
                &mut w,
                &Record::Step {
                    episode_id: ep.id.clone(),
                    timestep: s.timestep,
                    joints: s.joints.clone(),
                    ee_pose: pose_array(&s.ee_pose),
                    gripper: s.gripper,
                    frame_ref: s.frame_ref.clone(),
                    is_first: i == 0,
                    is_last: i + 1 == n,
                },
            );
        }
    }
    w.0
}

fn decode_records(read: &dyn Fn(&str) -> Option<Vec<u8>>) -> DecodeOutcome {
    let mut out = DecodeOutcome::new();
    let Some(bytes) = read(SRS_FILE) else {
        out.violation(SRS_FILE, "", "file-present", "record stream missing");
        return out;
    };
    let mut r = Reader::new(&bytes);
    if let Err((rule, detail)) = check_header(&mut r, SRS_MAGIC) {
        out.violation(SRS_FILE, "", rule, detail);
        return out;
    }
    let mut current: Option<Episode> = None;
    let mut frame = 0usize;
    while !r.done() {
        let at = r.pos;
        let header = (|| -> Result<(usize, u32), String> { Ok((r.u64()? as usize, r.u32()?)) })();
        let (len, crc) = match header {
            Ok(h) => h,
            Err(e) => {
                out.violation(SRS_FILE, format!("frames[{frame}]"), "parse-error", e);
                break;
            }
        };
        let payload = match r.take(len) {
            Ok(p) => p,
            Err(e) => {
                out.violation(SRS_FILE, format!("frames[{frame}]"), "parse-error", format!("frame at {at}: {e}"));
                break;
            }
        };
        if crc32fast::hash(payload) != crc {
            out.violation(SRS_FILE, format!("frames[{frame}]"), "frame-crc", format!("frame at byte {at}"));
            frame += 1;
            continue;
        }
        match serde_json::from_slice::<Record>(payload) {
            Ok(Record::Episode { episode_id, task_id, seed, success, length }) => {
                if let Some(ep) = current.take() {
                    out.episodes.push((SRS_FILE.to_string(), ep));
                }
                current = Some(Episode { id: episode_id, task_id, seed, steps: Vec::new(), success, length });
            }
            Ok(Record::Step { episode_id, timestep, joints, ee_pose, gripper, frame_ref, .. }) => match current.as_mut() {
                Some(ep) if ep.id == episode_id => ep.steps.push(Step {
                    timestep,
                    joints,
                    ee_pose: pose_from(&ee_pose),
                    gripper,
                    frame_ref,
                }),
                _ => out.violation(
                    SRS_FILE,
                    format!("frames[{frame}].episode_id"),
                    "step-order",
                    "step frame outside its episode",
                ),
            },
            Err(e) => {
                let field = missing_field(&e.to_string()).unwrap_or_default();
                out.violation(SRS_FILE, format!("frames[{frame}].{field}"), "record-schema", e.to_string());
            }
        }
        frame += 1;
    }
    if let Some(ep) = current.take() {
        out.episodes.push((SRS_FILE.to_string(), ep));
    }
    out
}

fn missing_field(msg: &str) -> Option<String> {
    let rest = msg.split("missing field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

// ---------------------------------------------------------------------------
// video-stub

fn video_index_path(id: &str) -> String {
    format!("videos/{id}.vidx")
}

fn placeholder_path(id: &str, step: usize) -> String {
    format!("frames/{id}/{step:06}.raw")
}

fn placeholder_bytes(frame_ref: &str) -> Vec<u8> {
    let mut b = PLACEHOLDER_PREFIX.to_vec();
    b.extend_from_slice(frame_ref.as_bytes());
    b.push(b'\n');
    b
}

fn encode_video(episodes: &[Episode]) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for ep in episodes {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(VIX_MAGIC);
        w.u8(VERSION);
        w.str16(&ep.id);
        w.str16(&ep.task_id);
        w.u64(ep.seed);
        w.u8(ep.success as u8);
        w.u64(ep.length);
        w.u32(ep.joint_dim() as u32);
        w.u32(ep.steps.len() as u32);
        for (i, s) in ep.steps.iter().enumerate() {
            w.i64(s.timestep);
            for j in &s.joints {
                w.f64(*j);
            }
            for v in pose_array(&s.ee_pose) {
                w.f64(v);
            }
            w.f64(s.gripper);
            w.str16(&s.frame_ref);
            let ph = placeholder_path(&ep.id, i);
            w.str16(&ph);
            files.push((ph, placeholder_bytes(&s.frame_ref)));
        }
        files.push((video_index_path(&ep.id), w.0));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

fn decode_video(manifest: &ExportManifest, read: &dyn Fn(&str) -> Option<Vec<u8>>) -> DecodeOutcome {
    let mut out = DecodeOutcome::new();
    let mut index_files: Vec<&str> = manifest
        .files
        .iter()
        .map(|f| f.path.as_str())
        .filter(|p| p.starts_with("videos/") && p.ends_with(".vidx"))
        .collect();
    index_files.sort();
    for id in &manifest.episode_ids {
        let p = video_index_path(id);
        if !index_files.contains(&p.as_str()) {
            out.violation(&p, format!("episodes[{id}]"), "file-present", "frame index not listed in manifest");
        }
    }
    for path in index_files {
        let Some(bytes) = read(path) else {
            out.violation(path, "", "file-present", "frame index missing");
            continue;
        };
        let mut r = Reader::new(&bytes);
        if let Err((rule, detail)) = check_header(&mut r, VIX_MAGIC) {
            out.violation(path, "", rule, detail);
            continue;
        }
        let parsed = (|| -> Result<(Episode, Vec<String>), String> {
            let id = r.str16()?;
            let task_id = r.str16()?;
            let seed = r.u64()?;
            let success = r.u8()? != 0;
            let length = r.u64()?;
            let jd = r.u32()? as usize;
            let n = r.u32()? as usize;
            let mut steps = Vec::with_capacity(n);
            let mut placeholders = Vec::with_capacity(n);
            for _ in 0..n {
                let timestep = r.i64()?;
                let joints = (0..jd).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                let ee = (0..7).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                let gripper = r.f64()?;
                let frame_ref = r.str16()?;
                placeholders.push(r.str16()?);
                steps.push(Step { timestep, joints, ee_pose: pose_from(&ee), gripper, frame_ref });
            }
            if !r.done() {
                return Err(format!("trailing bytes at {}", r.pos));
            }
            Ok((Episode { id, task_id, seed, steps, success, length }, placeholders))
        })();
        match parsed {
            Ok((ep, placeholders)) => {
                let mut broken = false;
                for (i, ph) in placeholders.iter().enumerate() {
                    match read(ph) {
                        Some(b) if b == placeholder_bytes(&ep.steps[i].frame_ref) => {}
                        Some(_) => {
                            out.violation(ph, format!("episodes[{}].steps[{i}].frame", ep.id), "placeholder-content", "placeholder does not match frame reference");
                            broken = true;
                        }
                        None => {
                            out.violation(ph, format!("episodes[{}].steps[{i}].frame", ep.id), "file-present", "frame placeholder missing");
                            broken = true;
                        }
                    }
                }
                if !broken {
                    out.episodes.push((path.to_string(), ep));
                }
            }
            Err(e) => out.violation(path, "", "parse-error", e),
        }
    }
    out
}

/// Canonical JSON form of an episode set, used for equality checks.
pub fn canonical_episodes(episodes: &[Episode]) -> Value {
    let mut sorted = episodes.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    serde_json::to_value(sorted).expect("episodes serialize")
}
