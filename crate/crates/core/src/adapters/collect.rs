use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::unit_hash;
use super::{AdapterError, TaskSpec};
use crate::data::{Episode, EpisodeSet, Step};
use crate::state::{Pose, SceneState};

/// Interpolation steps per trajectory segment.
pub const SEGMENT_STEPS: u64 = 10;
/// Steps in a complete episode: three segments plus the start pose.
pub const EPISODE_LENGTH: u64 = 3 * SEGMENT_STEPS + 1;
/// Distance under which the final pose counts as reaching the goal.
pub const GOAL_TOLERANCE: f64 = 1e-3;

const DEFAULT_JOINT_DIM: usize = 7;
const APPROACH_HEIGHT: f64 = 0.1;
const LIFT_HEIGHT: f64 = 0.2;
const PUSH_DISTANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    /// Probability that an episode is cut short and fails.
    pub fault_rate: f64,
    /// Joint vector length; defaults to 7 when `None`.
    pub joint_dim: Option<usize>,
    /// Index of the first episode, so repeated collections get fresh ids.
    pub first_index: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig { fault_rate: 0.0, joint_dim: None, first_index: 0 }
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn position_of(scene: &SceneState, category: &str) -> [f64; 3] {
    let mut es: Vec<_> = scene.entities_of(category).collect();
    es.sort_by(|a, b| a.id.cmp(&b.id));
    es[0].pose.position
}

/// Start, approach, grasp and goal waypoints of the scripted policy.
fn waypoints(spec: &TaskSpec, scene: &SceneState) -> [[f64; 3]; 4] {
    let start = add(scene.robot.as_ref().map(|r| r.base_pose.position).unwrap_or([0.0; 3]), [0.0, 0.0, 0.5]);
    let (object, goal) = match spec {
        TaskSpec::Pick(c) => {
            let p = position_of(scene, c);
            (p, add(p, [0.0, 0.0, LIFT_HEIGHT]))
        }
        TaskSpec::Push(c) => {
            let p = position_of(scene, c);
            (p, add(p, [PUSH_DISTANCE, 0.0, 0.0]))
        }
        TaskSpec::Place(a, b) => {
            let p = position_of(scene, a);
            let q = position_of(scene, b);
            let mut g = add(q, [0.0, 0.0, APPROACH_HEIGHT]);
            if dist(g, p) < PUSH_DISTANCE {
                g = add(g, [0.0, 0.0, LIFT_HEIGHT]);
            }
            (p, g)
        }
    };
    [start, add(object, [0.0, 0.0, APPROACH_HEIGHT]), object, goal]
}

/// Joint angles in `(-pi, pi)` for an end-effector position.
fn joints_for(p: [f64; 3], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let k = (i + 1) as f64;
            (p[i % 3] * k + p[(i + 1) % 3] * 0.5).sin() * 3.0
        })
        .collect()
}

/// Scripted collection of `n` episodes of `task`.
///
/// Each episode follows start → approach → grasp → goal. With probability
/// `fault_rate` an episode stops before reaching the goal and is marked
/// unsuccessful; the draw depends only on `(seed, task, index)`.
pub fn mock_collect(
    task: &str,
    n: u64,
    scene: &SceneState,
    seed: u64,
    config: &CollectConfig,
) -> Result<EpisodeSet, AdapterError> {
    let spec = TaskSpec::parse(task).ok_or_else(|| AdapterError::UnknownTask(task.to_string()))?;
    let missing = spec.missing_in(scene);
    if !missing.is_empty() {
        return Err(AdapterError::MissingTaskEntities { task: task.to_string(), missing });
    }
    if !(0.0..=1.0).contains(&config.fault_rate) {
        return Err(AdapterError::InvalidArgument { name: "fault_rate".into(), detail: "must lie in [0, 1]".into() });
    }
    let dim = config.joint_dim.unwrap_or(DEFAULT_JOINT_DIM);
    let wp = waypoints(&spec, scene);
    let mut full = Vec::with_capacity(EPISODE_LENGTH as usize);
    full.push(wp[0]);
    for seg in 0..3 {
        for s in 1..=SEGMENT_STEPS {
            full.push(lerp(wp[seg], wp[seg + 1], s as f64 / SEGMENT_STEPS as f64));
        }
    }
    let grasp_index = 2 * SEGMENT_STEPS as usize;
    let mut out = Vec::with_capacity(n as usize);
    for k in 0..n {
        let index = config.first_index + k;
        let id = format!("{task}_ep{index:05}");
        let ep_seed = (unit_hash(&[&seed.to_string(), task, &index.to_string()]) * (1u64 << 53) as f64) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let faulty = rng.gen::<f64>() < config.fault_rate;
        let len = if faulty { rng.gen_range(grasp_index + 1..EPISODE_LENGTH as usize) } else { EPISODE_LENGTH as usize };
        let steps: Vec<Step> = full[..len]
            .iter()
            .enumerate()
            .map(|(t, p)| Step {
                timestep: t as i64,
                joints: joints_for(*p, dim),
                ee_pose: Pose::at(p[0], p[1], p[2]),
                gripper: if t < grasp_index { 1.0 } else { 0.0 },
                frame_ref: format!("cam0/{id}/{t:04}"),
            })
            .collect();
        let last = steps.last().map(|s| s.ee_pose.position).unwrap_or(wp[0]);
        out.push(Episode {
            id,
            task_id: task.to_string(),
            seed: ep_seed,
            success: dist(last, wp[3]) <= GOAL_TOLERANCE,
            length: steps.len() as u64,
            steps,
        });
    }
    Ok(out)
}
