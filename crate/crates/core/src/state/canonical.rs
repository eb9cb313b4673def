use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

use super::{validate_context, OperationalContext, StateError};

pub const STATE_SCHEMA_VERSION: u64 = 1;

/// Hex SHA-256 digest.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(super) fn canonicalize(ctx: &mut OperationalContext) {
    let scene = &mut ctx.scene;
    scene.entities.sort_by(|a, b| a.id.cmp(&b.id));
    scene.relations.sort();
    scene.relations.dedup();
    scene.cameras.sort_by(|a, b| a.id.cmp(&b.id));
    scene.registered_assets.sort();
    scene.registered_assets.dedup();

    let data = &mut ctx.data;
    data.episodes.sort_by(|a, b| a.id.cmp(&b.id));
    for manifest in data.exports.values_mut() {
        manifest.episode_ids.sort();
        manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
    }

    let model = &mut ctx.model;
    model.code_assets.sort_by(|a, b| a.id.cmp(&b.id));
    model.checkpoints.sort_by(|a, b| a.id.cmp(&b.id));
    model
        .eval_reports
        .sort_by(|a, b| (&a.model, &a.benchmark).cmp(&(&b.model, &b.benchmark)));
}

/// Deterministic UTF-8 JSON rendering of a context: sorted keys, lists
/// sorted by id, floats in shortest round-trip form, `"state_schema": 1`.
pub fn canonical_serialize(ctx: &OperationalContext) -> Result<Vec<u8>, StateError> {
    let violations = validate_context(ctx);
    if !violations.is_empty() {
        return Err(StateError::InvalidContext(violations));
    }
    let mut ctx = ctx.clone();
    canonicalize(&mut ctx);
    let mut root = Map::new();
    root.insert("state_schema".into(), Value::from(STATE_SCHEMA_VERSION));
    root.insert("scene".into(), to_value(&ctx.scene)?);
    root.insert("data".into(), to_value(&ctx.data)?);
    root.insert("model".into(), to_value(&ctx.model)?);
    let mut out = Vec::with_capacity(1024);
    write_sorted(&Value::Object(root), &mut out);
    Ok(out)
}

/// Inverse of [`canonical_serialize`]. The result is validated.
pub fn deserialize_canonical(bytes: &[u8]) -> Result<OperationalContext, StateError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| StateError::Decode(e.to_string()))?;
    let Value::Object(mut root) = value else {
        return Err(StateError::Decode("top level is not an object".into()));
    };
    match root.remove("state_schema").and_then(|v| v.as_u64()) {
        Some(STATE_SCHEMA_VERSION) => {}
        other => return Err(StateError::Decode(format!("unsupported state_schema {other:?}"))),
    }
    let take = |root: &mut Map<String, Value>, key: &str| {
        root.remove(key).ok_or_else(|| StateError::Decode(format!("missing field {key}")))
    };
    let scene = take(&mut root, "scene")?;
    let data = take(&mut root, "data")?;
    let model = take(&mut root, "model")?;
    let ctx = OperationalContext {
        scene: serde_json::from_value(scene).map_err(|e| StateError::Decode(e.to_string()))?,
        data: serde_json::from_value(data).map_err(|e| StateError::Decode(e.to_string()))?,
        model: serde_json::from_value(model).map_err(|e| StateError::Decode(e.to_string()))?,
    };
    let violations = validate_context(&ctx);
    if !violations.is_empty() {
        return Err(StateError::InvalidContext(violations));
    }
    Ok(ctx)
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, StateError> {
    serde_json::to_value(v).map_err(|e| StateError::Decode(e.to_string()))
}

fn write_sorted(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            out.push(b'{');
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_vec(key).expect("string key serializes"));
                out.push(b':');
                write_sorted(&map[key.as_str()], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_sorted(item, out);
            }
            out.push(b']');
        }
        Value::Number(n) => out.extend(normalize_number(n).to_string().into_bytes()),
        other => out.extend(serde_json::to_vec(other).expect("scalar serializes")),
    }
}

fn normalize_number(n: &Number) -> Number {
    match n.as_f64() {
        // -0.0 and 0.0 must render identically.
        Some(f) if n.is_f64() && f == 0.0 => Number::from_f64(0.0).expect("zero is finite"),
        _ => n.clone(),
    }
}
