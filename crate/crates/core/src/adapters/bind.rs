use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AdapterError, AssetLibrary, AssetOrigin, BackendDescriptor, SourceDescriptor};
use crate::data::canonical_episodes;
use crate::intent::{EntityRef, ParamValue};
use crate::skills::{SkillCall, SkillSpec};
use crate::state::{hash_bytes, OperationalContext, SceneState};

/// Spacing along `+x` between freshly spawned entities.
const SPAWN_SPACING: f64 = 0.5;
const FALLBACK_EXTENT: [f64; 3] = [0.1, 0.1, 0.1];

/// A backend operation with every argument resolved to a concrete value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedAction {
    pub binding: String,
    pub backend: String,
    pub args: BTreeMap<String, Value>,
}

/// Resolves an entity reference to a scene entity id.
pub fn resolve_entity(scene: &SceneState, r: &EntityRef) -> Result<String, AdapterError> {
    if let Some(id) = &r.id {
        return scene.entity(id).map(|e| e.id.clone()).ok_or_else(|| AdapterError::UnknownEntity(id.clone()));
    }
    let mut ids: Vec<&str> = scene.entities_of(&r.category).map(|e| e.id.as_str()).collect();
    ids.sort();
    match ids.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(AdapterError::UnknownEntity(r.category.clone())),
        _ => Err(AdapterError::AmbiguousEntity(format!("{} matches {}", r.category, ids.join(", ")))),
    }
}

fn p_str<'a>(call: &'a SkillCall, name: &str) -> Result<&'a str, AdapterError> {
    call.params.get(name).and_then(ParamValue::as_str).ok_or_else(|| missing(name))
}

fn p_int(call: &SkillCall, name: &str) -> Result<u64, AdapterError> {
    match call.params.get(name).and_then(ParamValue::as_int) {
        Some(n) if n > 0 => Ok(n as u64),
        _ => Err(missing(name)),
    }
}

fn p_entity(scene: &SceneState, call: &SkillCall, name: &str) -> Result<String, AdapterError> {
    let r = call.params.get(name).and_then(ParamValue::as_entity).ok_or_else(|| missing(name))?;
    resolve_entity(scene, r)
}

fn missing(name: &str) -> AdapterError {
    AdapterError::InvalidArgument { name: name.into(), detail: "missing or mistyped".into() }
}

/// Smallest unused `<category>_<n>`, `n >= 1`.
fn fresh_entity_id(scene: &SceneState, category: &str) -> String {
    (1..)
        .map(|n| format!("{category}_{n}"))
        .find(|id| scene.entity(id).is_none())
        .expect("unbounded range")
}

fn extent_of(scene: &SceneState, assets: &AssetLibrary, id: &str) -> [f64; 3] {
    let Some(e) = scene.entity(id) else { return FALLBACK_EXTENT };
    assets
        .get(&e.asset_ref)
        .or_else(|| assets.by_category(&e.category).next())
        .map(|r| r.descriptor.extent_m)
        .unwrap_or(FALLBACK_EXTENT)
}

/// Grounds a skill call against the context and one backend. Pure: reads
/// its inputs only. `seed` feeds the backends that draw randomness.
pub fn bind(
    call: &SkillCall,
    spec: &SkillSpec,
    ctx: &OperationalContext,
    assets: &AssetLibrary,
    backend: &BackendDescriptor,
    seed: u64,
) -> Result<GroundedAction, AdapterError> {
    let binding = spec.binding.as_str();
    if !backend.capabilities.contains(binding) {
        return Err(AdapterError::UnsupportedCapability { backend: backend.id.clone(), binding: binding.into() });
    }
    let scene = &ctx.scene;
    let mut args: BTreeMap<String, Value> = BTreeMap::new();
    let mut put = |k: &str, v: Value| {
        args.insert(k.to_string(), v);
    };
    match binding {
        "recognize-objects" | "localize-objects" => {}
        "spawn-asset" | "spawn-asset-staged" => {
            let category = p_str(call, "category")?;
            let asset = assets
                .by_category(category)
                .filter(|r| r.registered_on(&backend.id))
                .filter(|r| {
                    r.source == AssetOrigin::Builtin || scene.registered_assets.iter().any(|a| a.asset_id == r.id)
                })
                .min_by_key(|r| (r.source != AssetOrigin::Builtin, r.id.clone()))
                .ok_or_else(|| AdapterError::UnregisteredAsset(category.to_string()))?;
            put("asset", json!(asset.id));
            put("category", json!(category));
            put("entity", json!(fresh_entity_id(scene, category)));
            put("position", json!([SPAWN_SPACING * scene.entities.len() as f64, 0.0, 0.0]));
        }
        "remove-entity" => put("entity", json!(p_entity(scene, call, "entity")?)),
        "set-relation" | "clear-relation" => {
            let subject = p_entity(scene, call, "subject")?;
            let object = p_entity(scene, call, "object")?;
            if binding == "set-relation" {
                put("object_extent", json!(extent_of(scene, assets, &object)));
            }
            put("subject", json!(subject));
            put("object", json!(object));
            put("predicate", json!(p_str(call, "predicate")?));
        }
        "set-lighting" => {
            for k in ["intensity", "color_temperature"] {
                if let Some(v) = call.params.get(k).and_then(ParamValue::as_f64) {
                    put(k, json!(v));
                }
            }
        }
        "set-camera" => {
            put("camera", json!(p_str(call, "camera")?));
            put("fov", json!(call.params.get("fov").and_then(ParamValue::as_f64).ok_or_else(|| missing("fov"))?));
        }
        "remove-camera" => {
            let cam = p_str(call, "camera")?;
            if scene.camera(cam).is_none() {
                return Err(AdapterError::UnknownCamera(cam.into()));
            }
            put("camera", json!(cam));
        }
        "set-robot" => {
            let model = p_str(call, "model")?;
            let joints = assets.robot_joint_count(model).ok_or_else(|| AdapterError::UnknownRobot(model.into()))?;
            put("model", json!(model));
            put("joints", json!(joints));
        }
        "ingest-asset" => {
            let category = p_str(call, "category")?;
            let source = SourceDescriptor::Catalog { category: category.to_string() };
            let record = assets.preview_ingest(&source, &backend.id)?;
            put("asset", json!(record.id));
            put("category", json!(category));
            put("source", serde_json::to_value(&source).expect("source serializes"));
        }
        "collect-episodes" => {
            let task = p_str(call, "task")?;
            put("task", json!(task));
            put("count", json!(p_int(call, "count")?));
            put("seed", json!(seed));
            put("fault_rate", json!(backend.config.get("fault_rate").and_then(Value::as_f64).unwrap_or(0.0)));
            if let Some(r) = &scene.robot {
                put("joint_dim", json!(r.joint_names.len()));
            }
            put("first_index", json!(ctx.data.episodes_of(task).count()));
        }
        "export-format" => {
            let task = p_str(call, "task")?;
            let format = p_str(call, "format")?;
            let episodes: Vec<_> = ctx.data.episodes_of(task).filter(|e| e.success).cloned().collect();
            let digest = hash_bytes(canonical_episodes(&episodes).to_string().as_bytes());
            let root = backend.config.get("export_root").and_then(Value::as_str).map(PathBuf::from).unwrap_or_else(|| {
                std::env::temp_dir().join("claw-exports")
            });
            let dest = root.join(task).join(format).join(&digest[..12]);
            put("task", json!(task));
            put("format", json!(format));
            put("destination", json!(dest.to_string_lossy()));
        }
        "edit-code" => {
            let model = p_str(call, "model")?;
            let name = p_str(call, "name")?;
            put("id", json!(format!("{model}/{name}")));
            put("model", json!(model));
            put("content", json!(format!("# {model}/{name}\ndef {name}(batch):\n    return batch\n")));
        }
        "train-model" => {
            put("model", json!(p_str(call, "model")?));
            put("dataset", json!(p_str(call, "dataset")?));
            put("epochs", json!(p_int(call, "epochs")?));
            put("seed", json!(seed));
        }
        "evaluate-model" => {
            put("model", json!(p_str(call, "model")?));
            put("benchmark", json!(p_str(call, "benchmark")?));
            put("episodes", json!(p_int(call, "episodes")?));
            put("seed", json!(seed));
        }
        other => {
            return Err(AdapterError::UnsupportedCapability { backend: backend.id.clone(), binding: other.into() })
        }
    }
    Ok(GroundedAction { binding: binding.to_string(), backend: backend.id.clone(), args })
}
