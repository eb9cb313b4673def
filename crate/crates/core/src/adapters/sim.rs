use serde_json::Value;

use super::{AdapterError, GroundedAction};
use crate::state::{Camera, Entity, Pose, RegisteredAsset, Relation, Robot, SceneState, SpatialPredicate};

/// Offset along `+x` for `near`.
pub const NEAR_OFFSET: f64 = 0.2;
/// Offset along `y` for `left_of` (`+`) and `right_of` (`-`).
pub const SIDE_OFFSET: f64 = 0.3;

/// Camera pose used when a camera is first added.
const DEFAULT_CAMERA_POSE: Pose = Pose { position: [1.5, 0.0, 1.2], orientation: [1.0, 0.0, 0.0, 0.0] };

/// Position a subject takes to satisfy `predicate` relative to an object
/// at `object` with bounding extent `extent` (meters) and uniform `scale`.
pub fn placement(predicate: SpatialPredicate, object: [f64; 3], extent: [f64; 3], scale: f64) -> [f64; 3] {
    let [x, y, z] = object;
    match predicate {
        SpatialPredicate::On => [x, y, z + extent[2] * scale],
        SpatialPredicate::In => [x, y, z + extent[2] * scale / 2.0],
        SpatialPredicate::Near => [x + NEAR_OFFSET, y, z],
        SpatialPredicate::LeftOf => [x, y + SIDE_OFFSET, z],
        SpatialPredicate::RightOf => [x, y - SIDE_OFFSET, z],
    }
}

pub(crate) fn arg_str<'a>(a: &'a GroundedAction, name: &str) -> Result<&'a str, AdapterError> {
    a.args.get(name).and_then(Value::as_str).ok_or_else(|| missing(name))
}

pub(crate) fn arg_f64(a: &GroundedAction, name: &str) -> Result<f64, AdapterError> {
    a.args.get(name).and_then(Value::as_f64).ok_or_else(|| missing(name))
}

pub(crate) fn arg_u64(a: &GroundedAction, name: &str) -> Result<u64, AdapterError> {
    a.args.get(name).and_then(Value::as_u64).ok_or_else(|| missing(name))
}

fn arg_vec3(a: &GroundedAction, name: &str) -> Result<[f64; 3], AdapterError> {
    let v: Vec<f64> = a
        .args
        .get(name)
        .and_then(Value::as_array)
        .map(|xs| xs.iter().filter_map(Value::as_f64).collect())
        .ok_or_else(|| missing(name))?;
    v.try_into().map_err(|_| AdapterError::InvalidArgument { name: name.into(), detail: "expected 3 numbers".into() })
}

fn missing(name: &str) -> AdapterError {
    AdapterError::InvalidArgument { name: name.into(), detail: "missing or mistyped".into() }
}

fn predicate(a: &GroundedAction) -> Result<SpatialPredicate, AdapterError> {
    let p = arg_str(a, "predicate")?;
    SpatialPredicate::parse(p).ok_or_else(|| AdapterError::InvalidArgument { name: "predicate".into(), detail: p.into() })
}

/// Applies a scene-editing action of the mock simulator. Pure: returns the
/// edited scene with its version bumped, or an error and no change.
pub fn mock_sim_apply(action: &GroundedAction, scene: &SceneState) -> Result<SceneState, AdapterError> {
    let mut s = scene.clone();
    match action.binding.as_str() {
        "recognize-objects" | "localize-objects" => return Ok(s),
        "spawn-asset" | "spawn-asset-staged" => {
            let id = arg_str(action, "entity")?.to_string();
            if s.entity(&id).is_some() {
                return Err(AdapterError::InvalidArgument { name: "entity".into(), detail: format!("{id} exists") });
            }
            let p = arg_vec3(action, "position")?;
            s.entities.push(Entity {
                id,
                category: arg_str(action, "category")?.to_string(),
                asset_ref: arg_str(action, "asset")?.to_string(),
                pose: Pose::at(p[0], p[1], p[2]),
                scale: 1.0,
            });
        }
        "remove-entity" => {
            let id = arg_str(action, "entity")?;
            if s.entity(id).is_none() {
                return Err(AdapterError::UnknownEntity(id.to_string()));
            }
            s.entities.retain(|e| e.id != id);
            s.relations.retain(|r| r.subject != id && r.object != id);
        }
        "set-relation" => {
            let subject = arg_str(action, "subject")?;
            let object = arg_str(action, "object")?;
            let pred = predicate(action)?;
            let extent = arg_vec3(action, "object_extent")?;
            let target = match s.entity(object) {
                Some(o) if subject != object => placement(pred, o.pose.position, extent, o.scale),
                Some(_) => return Err(AdapterError::InvalidPlacement(format!("{subject} cannot be placed relative to itself"))),
                None => return Err(AdapterError::InvalidPlacement(format!("target {object} does not exist"))),
            };
            let Some(e) = s.entity_mut(subject) else {
                return Err(AdapterError::InvalidPlacement(format!("subject {subject} does not exist")));
            };
            e.pose.position = target;
            s.relations.retain(|r| r.subject != subject);
            s.relations.push(Relation::new(subject, pred, object));
        }
        "clear-relation" => {
            let r = Relation::new(arg_str(action, "subject")?, predicate(action)?, arg_str(action, "object")?);
            s.relations.retain(|x| *x != r);
        }
        "set-lighting" => {
            if let Some(v) = action.args.get("intensity").and_then(Value::as_f64) {
                s.lighting.intensity = v;
            }
            if let Some(v) = action.args.get("color_temperature").and_then(Value::as_f64) {
                s.lighting.color_temperature = v;
            }
        }
        "set-camera" => {
            let id = arg_str(action, "camera")?;
            let fov = arg_f64(action, "fov")?;
            match s.cameras.iter_mut().find(|c| c.id == id) {
                Some(c) => c.fov_deg = fov,
                None => s.cameras.push(Camera { id: id.to_string(), pose: DEFAULT_CAMERA_POSE, fov_deg: fov }),
            }
        }
        "remove-camera" => {
            let id = arg_str(action, "camera")?;
            if s.camera(id).is_none() {
                return Err(AdapterError::UnknownCamera(id.to_string()));
            }
            s.cameras.retain(|c| c.id != id);
        }
        "set-robot" => {
            let model = arg_str(action, "model")?.to_string();
            let joints = arg_u64(action, "joints")?;
            s.robot = Some(Robot {
                model,
                base_pose: Pose::IDENTITY,
                joint_names: (0..joints).map(|j| format!("joint_{j}")).collect(),
            });
        }
        "ingest-asset" => {
            let a = RegisteredAsset {
                asset_id: arg_str(action, "asset")?.to_string(),
                category: arg_str(action, "category")?.to_string(),
            };
            if !s.registered_assets.contains(&a) {
                s.registered_assets.push(a);
            }
        }
        other => {
            return Err(AdapterError::UnsupportedCapability { backend: action.backend.clone(), binding: other.to_string() })
        }
    }
    s.touch();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_rules() {
        let o = [1.0, 2.0, 0.5];
        let e = [0.4, 0.4, 0.75];
        assert_eq!(placement(SpatialPredicate::On, o, e, 2.0), [1.0, 2.0, 2.0]);
        assert_eq!(placement(SpatialPredicate::In, o, e, 1.0), [1.0, 2.0, 0.875]);
        assert_eq!(placement(SpatialPredicate::Near, o, e, 1.0), [1.2, 2.0, 0.5]);
        assert_eq!(placement(SpatialPredicate::LeftOf, o, e, 1.0), [1.0, 2.3, 0.5]);
        assert_eq!(placement(SpatialPredicate::RightOf, o, e, 1.0), [1.0, 1.7, 0.5]);
    }
}
