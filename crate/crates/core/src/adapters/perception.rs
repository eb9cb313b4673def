//! Deterministic stand-ins for object recognition and spatial localization
//! over structured observation descriptors.

use crate::intent::ObservationDescriptor;
use crate::state::SpatialPredicate;

/// Horizontal distance under which a higher object is taken to rest on a lower one.
pub const SUPPORT_RADIUS: f64 = 0.25;

/// Distinct categories in the observation, in first-seen order.
pub fn recognize_objects(obs: &ObservationDescriptor) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for o in &obs.objects {
        if !out.contains(&o.category) {
            out.push(o.category.clone());
        }
    }
    out
}

/// Relations between observed objects, by category: explicit relations
/// first, then `on` for any object stacked above another within
/// [`SUPPORT_RADIUS`].
pub fn localize_objects(obs: &ObservationDescriptor) -> Vec<(String, SpatialPredicate, String)> {
    let mut out: Vec<(String, SpatialPredicate, String)> = Vec::new();
    let mut push = |t: (String, SpatialPredicate, String)| {
        if t.0 != t.2 && !out.contains(&t) {
            out.push(t);
        }
    };
    for o in &obs.objects {
        for (pred, idx) in &o.relations {
            if let Some(target) = obs.objects.get(*idx) {
                push((o.category.clone(), *pred, target.category.clone()));
            }
        }
    }
    for (i, a) in obs.objects.iter().enumerate() {
        // Nearest supporting object below, if any.
        let support = obs
            .objects
            .iter()
            .enumerate()
            .filter(|(j, b)| {
                *j != i
                    && b.position[2] < a.position[2]
                    && (a.position[0] - b.position[0]).hypot(a.position[1] - b.position[1]) < SUPPORT_RADIUS
            })
            .max_by(|(_, x), (_, y)| x.position[2].total_cmp(&y.position[2]));
        if let Some((_, b)) = support {
            push((a.category.clone(), SpatialPredicate::On, b.category.clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::ObservedObject;

    fn obj(cat: &str, p: [f64; 3]) -> ObservedObject {
        ObservedObject { category: cat.into(), position: p, relations: vec![] }
    }

    #[test]
    fn stacked_objects_are_on() {
        let obs = ObservationDescriptor {
            objects: vec![obj("table", [0.0, 0.0, 0.375]), obj("mug", [0.1, 0.0, 0.8]), obj("box", [2.0, 0.0, 0.1])],
        };
        assert_eq!(recognize_objects(&obs), vec!["table", "mug", "box"]);
        assert_eq!(localize_objects(&obs), vec![("mug".to_string(), SpatialPredicate::On, "table".to_string())]);
    }
}
