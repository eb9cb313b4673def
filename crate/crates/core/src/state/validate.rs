use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{hash_bytes, quat_norm, OperationalContext, Pose, QUAT_STORAGE_TOLERANCE};

/// One broken invariant: where it is and which rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub rule: String,
    pub detail: String,
}

impl Violation {
    fn new(path: impl Into<String>, rule: &str, detail: impl Into<String>) -> Self {
        Violation { path: path.into(), rule: rule.to_string(), detail: detail.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.path, self.rule, self.detail)
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, rule: &str, detail: impl Into<String>) {
        self.out.push(Violation::new(path, rule, detail));
    }

    fn finite(&mut self, path: &str, value: f64) -> bool {
        if value.is_finite() {
            true
        } else {
            self.push(path, "finite-number", format!("{value} is not finite"));
            false
        }
    }

    fn pose(&mut self, path: &str, pose: &Pose) {
        let all_finite = pose
            .position
            .iter()
            .chain(pose.orientation.iter())
            .all(|c| c.is_finite());
        if !all_finite {
            self.push(format!("{path}.pose"), "finite-number", "pose has a non-finite component");
            return;
        }
        let norm = quat_norm(&pose.orientation);
        if (norm - 1.0).abs() > QUAT_STORAGE_TOLERANCE {
            self.push(
                format!("{path}.pose.orientation"),
                "quaternion-unit-norm",
                format!("norm {norm} deviates from 1 by more than {QUAT_STORAGE_TOLERANCE}"),
            );
        }
    }
}

/// Checks every type invariant and cross-reference of a context.
///
/// Total: never panics, returns an empty list iff the context is valid.
pub fn validate_context(ctx: &OperationalContext) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };
    let scene = &ctx.scene;

    let mut ids = BTreeSet::new();
    for e in &scene.entities {
        let path = format!("scene.entities[{}]", e.id);
        if e.id.is_empty() {
            c.push(&path, "entity-id-nonempty", "entity id is empty");
        }
        if !ids.insert(e.id.as_str()) {
            c.push(&path, "entity-id-unique", format!("duplicate entity id {}", e.id));
        }
        c.pose(&path, &e.pose);
        if c.finite(&format!("{path}.scale"), e.scale) && e.scale <= 0.0 {
            c.push(format!("{path}.scale"), "scale-positive", format!("scale {} is not positive", e.scale));
        }
    }
    for r in &scene.relations {
        for endpoint in [&r.subject, &r.object] {
            if !ids.contains(endpoint.as_str()) {
                c.push(
                    format!("scene.{}", r.path()),
                    "relation-endpoint-exists",
                    format!("relation references missing entity {endpoint}"),
                );
            }
        }
    }
    if let Some(robot) = &scene.robot {
        c.pose("scene.robot.base", &robot.base_pose);
        if robot.model.is_empty() {
            c.push("scene.robot.model", "robot-model-nonempty", "robot model id is empty");
        }
    }
    let l = &scene.lighting;
    if c.finite("scene.lighting.intensity", l.intensity) && !(0.0..=1.0).contains(&l.intensity) {
        c.push("scene.lighting.intensity", "lighting-intensity-range", format!("{} outside [0,1]", l.intensity));
    }
    if c.finite("scene.lighting.color_temperature", l.color_temperature) && l.color_temperature <= 0.0 {
        c.push(
            "scene.lighting.color_temperature",
            "color-temperature-positive",
            format!("{} K is not positive", l.color_temperature),
        );
    }
    let mut cam_ids = BTreeSet::new();
    for cam in &scene.cameras {
        let path = format!("scene.cameras[{}]", cam.id);
        if !cam_ids.insert(cam.id.as_str()) {
            c.push(&path, "camera-id-unique", format!("duplicate camera id {}", cam.id));
        }
        c.pose(&path, &cam.pose);
        if c.finite(&format!("{path}.fov_deg"), cam.fov_deg) && !(cam.fov_deg > 0.0 && cam.fov_deg < 180.0) {
            c.push(format!("{path}.fov_deg"), "camera-fov-range", format!("{} outside (0,180)", cam.fov_deg));
        }
    }

    let data = &ctx.data;
    let mut episode_ids = BTreeSet::new();
    for ep in &data.episodes {
        let path = format!("data.episodes[{}]", ep.id);
        if !episode_ids.insert(ep.id.as_str()) {
            c.push(&path, "episode-id-unique", format!("duplicate episode id {}", ep.id));
        }
        for v in ep.violations() {
            c.push(format!("{path}.{}", v.0), v.1, v.2);
        }
        if !data.provenance.contains_key(&ep.id) {
            c.push(&path, "provenance-exists", format!("no provenance for episode {}", ep.id));
        }
    }
    for (format, manifest) in &data.exports {
        for id in &manifest.episode_ids {
            if !episode_ids.contains(id.as_str()) {
                c.push(
                    format!("data.exports[{format}]"),
                    "export-episode-exists",
                    format!("manifest covers unknown episode {id}"),
                );
            }
        }
        if manifest.format != *format {
            c.push(format!("data.exports[{format}]"), "export-format-key", "manifest keyed under another format");
        }
    }
    for id in data.provenance.keys() {
        if !episode_ids.contains(id.as_str()) {
            c.push(format!("data.provenance[{id}]"), "provenance-episode-exists", "provenance for unknown episode");
        }
    }

    let model = &ctx.model;
    let mut code_ids = BTreeSet::new();
    for code in &model.code_assets {
        let path = format!("model.code_assets[{}]", code.id);
        if !code_ids.insert(code.id.as_str()) {
            c.push(&path, "code-id-unique", format!("duplicate code asset {}", code.id));
        }
        if hash_bytes(code.content.as_bytes()) != code.content_hash {
            c.push(&path, "code-hash-matches", "content hash does not match content");
        }
    }
    let datasets: BTreeSet<&str> = data.episodes.iter().map(|e| e.task_id.as_str()).collect();
    let mut ckpt_ids = BTreeSet::new();
    for ckpt in &model.checkpoints {
        let path = format!("model.checkpoints[{}]", ckpt.id);
        if !ckpt_ids.insert(ckpt.id.as_str()) {
            c.push(&path, "checkpoint-id-unique", format!("duplicate checkpoint {}", ckpt.id));
        }
        if !datasets.contains(ckpt.parent_dataset.as_str()) {
            c.push(
                &path,
                "checkpoint-dataset-resolves",
                format!("parent dataset {} has no episodes", ckpt.parent_dataset),
            );
        }
        for (k, v) in &ckpt.metrics {
            c.finite(&format!("{path}.metrics.{k}"), *v);
        }
    }
    for r in &model.eval_reports {
        let path = format!("model.eval_reports[{}/{}]", r.model, r.benchmark);
        if c.finite(&format!("{path}.success_rate"), r.success_rate) && !(0.0..=1.0).contains(&r.success_rate) {
            c.push(&path, "eval-success-range", format!("success rate {} outside [0,1]", r.success_rate));
        }
        if r.episode_count == 0 {
            c.push(&path, "eval-episodes-positive", "completed report has no episodes");
        }
        if c.finite(&format!("{path}.resource_units"), r.resource_units) && r.resource_units < 0.0 {
            c.push(&path, "eval-resources-nonnegative", "negative resource usage");
        }
    }
    c.out
}
