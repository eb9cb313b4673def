//! Seeded fixtures shared by the test suites: random planning instances,
//! an exhaustive planning oracle and random episode sets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapters::AssetLibrary;
use crate::data::{Episode, Step};
use crate::intent::{EntityRef, GoalSpec, ObservationDescriptor, ObservedObject, ScenePredicate};
use crate::planner::{candidate_calls, evaluate_sequence, AbstractState, CostModel, PlanHints};
use crate::skills::{register_skill, SkillCall, SkillLibrary};
use crate::state::{Camera, Entity, Lighting, OperationalContext, Pose, Relation, Robot, SpatialPredicate};

const CATEGORIES: &[&str] = &["mug", "table", "bowl", "plate", "cube"];
const SCENE_SKILLS: &[&str] = &[
    "add_entity",
    "add_entity_staged",
    "remove_entity",
    "set_relation",
    "clear_relation",
    "set_lighting",
    "set_camera",
    "remove_camera",
    "set_robot",
    "recognize_objects",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adds an entity of `category` with the builtin asset and the next free id.
pub fn add_entity(ctx: &mut OperationalContext, category: &str) -> String {
    let n = ctx.scene.entities_of(category).count();
    let id = (n..).map(|k| format!("{category}_{k}")).find(|id| ctx.scene.entity(id).is_none()).expect("unbounded");
    let x = 0.5 * ctx.scene.entities.len() as f64;
    ctx.scene.entities.push(Entity {
        id: id.clone(),
        category: category.into(),
        asset_ref: format!("{category}_01"),
        pose: Pose::at(x, 0.0, 0.0),
        scale: 1.0,
    });
    ctx.scene.touch();
    id
}

pub fn add_camera(ctx: &mut OperationalContext, id: &str, fov: f64) {
    ctx.scene.cameras.push(Camera { id: id.into(), pose: Pose::at(1.5, 0.0, 1.2), fov_deg: fov });
    ctx.scene.touch();
}

/// A small random scene: up to three entities, at most one relation,
/// up to two cameras and random lighting.
pub fn random_scene(r: &mut impl Rng) -> OperationalContext {
    let mut ctx = OperationalContext::empty("rand");
    let mut ids = Vec::new();
    for _ in 0..r.gen_range(0..=3) {
        let c = CATEGORIES.choose(r).expect("nonempty");
        ids.push(add_entity(&mut ctx, c));
    }
    if ids.len() >= 2 && r.gen_bool(0.5) {
        let p = *SpatialPredicate::ALL.choose(r).expect("nonempty");
        ctx.scene.relations.push(Relation::new(ids[0].clone(), p, ids[1].clone()));
    }
    for k in 0..r.gen_range(0..=2) {
        add_camera(&mut ctx, &format!("cam{k}"), [45.0, 60.0, 90.0][r.gen_range(0..3)]);
    }
    ctx.scene.lighting = Lighting { intensity: r.gen_range(1..=10) as f64 / 10.0, color_temperature: 5500.0 };
    ctx.canonicalize();
    ctx
}

fn random_predicate(r: &mut impl Rng, ctx: &OperationalContext) -> ScenePredicate {
    let pick = |r: &mut dyn rand::RngCore| CATEGORIES[r.gen_range(0..CATEGORIES.len())];
    match r.gen_range(0..8) {
        0 | 1 => ScenePredicate::EntityExists { entity: EntityRef::category(pick(r)) },
        2 => {
            let a = pick(r);
            let b = CATEGORIES.iter().copied().filter(|c| *c != a).collect::<Vec<_>>()[r.gen_range(0..CATEGORIES.len() - 1)];
            let p = *SpatialPredicate::ALL.choose(r).expect("nonempty");
            ScenePredicate::RelationHolds { subject: EntityRef::category(a), predicate: p, object: EntityRef::category(b) }
        }
        3 => match ctx.scene.entities.choose(r) {
            Some(e) => ScenePredicate::EntityAbsent { entity: EntityRef::id(e.category.clone(), e.id.clone()) },
            None => ScenePredicate::EntityExists { entity: EntityRef::category(pick(r)) },
        },
        4 => match ctx.scene.relations.first() {
            Some(rel) => {
                let cat_of = |id: &str| ctx.scene.entity(id).map(|e| e.category.clone()).unwrap_or_default();
                ScenePredicate::RelationAbsent {
                    subject: EntityRef::id(cat_of(&rel.subject), rel.subject.clone()),
                    predicate: rel.predicate,
                    object: EntityRef::id(cat_of(&rel.object), rel.object.clone()),
                }
            }
            None => ScenePredicate::RobotIs { model: "franka".into() },
        },
        5 => {
            let lo = r.gen_range(0..8) as f64 / 10.0;
            ScenePredicate::LightingInRange { min: lo.into(), max: (lo + 0.2).into() }
        }
        6 => ScenePredicate::CameraPresent { id: format!("cam{}", r.gen_range(0..3)), fov: Some(75.0.into()) },
        _ => ScenePredicate::CameraAbsent { id: format!("cam{}", r.gen_range(0..2)) },
    }
}

/// A planning problem with a restricted, re-costed skill library.
#[derive(Debug, Clone)]
pub struct PlannerInstance {
    pub lib: SkillLibrary,
    pub ctx: OperationalContext,
    pub start: AbstractState,
    pub goal: GoalSpec,
    pub hints: PlanHints,
    pub cost: CostModel,
}

/// Random instance over scene skills: at most `max_skills` skills with
/// random costs, one to three goal predicates and random `α`, `λ`.
pub fn random_planner_instance(seed: u64, max_skills: usize, k_max: usize) -> PlannerInstance {
    let mut r = rng(seed);
    let builtin = SkillLibrary::builtin();
    let n = r.gen_range(1..=max_skills.min(SCENE_SKILLS.len()));
    let ids: Vec<&str> = SCENE_SKILLS.choose_multiple(&mut r, n).copied().collect();
    let mut lib = SkillLibrary::new();
    for id in ids {
        let mut spec = builtin.get(id).expect("builtin skill").clone();
        spec.cost.human = [0.0, 0.5, 1.0][r.gen_range(0..3)];
        spec.cost.sys_time = r.gen_range(1..=6) as f64 * 0.5;
        spec.cost.sys_tokens = [0.0, 0.25][r.gen_range(0..2)];
        lib = register_skill(lib, spec).expect("restricted library is valid");
    }
    let ctx = random_scene(&mut r);
    let mut goal = GoalSpec::default();
    for _ in 0..r.gen_range(1..=3) {
        let p = random_predicate(&mut r, &ctx);
        if p.negation().is_some_and(|neg| goal.scene_goals.contains(&neg)) {
            continue;
        }
        goal.scene_goals.insert(p);
    }
    let cost = CostModel {
        alpha: r.gen_range(1..=8) as f64 * 0.25,
        lambda: r.gen_range(1..=40) as f64 * 0.5,
        max_depth: k_max,
        ..CostModel::default()
    };
    let start = AbstractState::from_context(&ctx, &AssetLibrary::builtin());
    PlannerInstance { lib, ctx, start, goal, hints: PlanHints::default(), cost }
}

/// Minimum objective over every candidate sequence of length at most
/// `cost.max_depth`, by exhaustive enumeration without pruning.
pub fn brute_force_optimum(inst: &PlannerInstance) -> (f64, Vec<SkillCall>) {
    fn walk(
        inst: &PlannerInstance,
        s: &AbstractState,
        seq: &mut Vec<SkillCall>,
        best: &mut (f64, Vec<SkillCall>),
    ) {
        let (b, _) = evaluate_sequence(&inst.start, seq, &inst.goal, &inst.lib, &inst.cost).expect("enumerated sequences apply");
        if b.objective < best.0 {
            *best = (b.objective, seq.clone());
        }
        if seq.len() >= inst.cost.max_depth {
            return;
        }
        for (call, next) in candidate_calls(s, &inst.goal, &inst.hints, &inst.lib) {
            seq.push(call);
            walk(inst, &next, seq, best);
            seq.pop();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    walk(inst, &inst.start, &mut Vec::new(), &mut best);
    best
}

/// A random but schema-valid episode.
pub fn random_episode(r: &mut impl Rng, id: &str, task: &str, dim: usize) -> Episode {
    let len = r.gen_range(1..=12);
    let mut t = 0i64;
    let steps = (0..len)
        .map(|k| {
            if k > 0 {
                t += r.gen_range(1..=3);
            }
            let q: [f64; 4] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(0.1..1.0)];
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            Step {
                timestep: t,
                joints: (0..dim).map(|_| r.gen_range(-3.2..3.2)).collect(),
                ee_pose: Pose { position: [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(0.0..1.5)], orientation: q.map(|c| c / norm) },
                gripper: r.gen_range(0.0..=1.0),
                frame_ref: format!("cam0/{id}/{t:04}"),
            }
        })
        .collect::<Vec<_>>();
    Episode { id: id.into(), task_id: task.into(), seed: r.gen(), length: steps.len() as u64, steps, success: r.gen_bool(0.8) }
}

/// One to eight random episodes of a single task with a shared joint dimension.
pub fn random_episode_set(seed: u64) -> Vec<Episode> {
    let mut r = rng(seed);
    let dim = r.gen_range(1..=8);
    let task = ["pick_mug", "push_cube", "place_mug_on_plate"][r.gen_range(0..3)];
    (0..r.gen_range(1..=8)).map(|k| random_episode(&mut r, &format!("{task}_ep{k:05}"), task, dim)).collect()
}

/// table_0 with mug_0 on it, bowl_0, camera cam0 and a franka arm.
pub fn kitchen() -> OperationalContext {
    let mut ctx = OperationalContext::empty("kitchen");
    add_entity(&mut ctx, "table");
    add_entity(&mut ctx, "mug");
    add_entity(&mut ctx, "bowl");
    ctx.scene.relations.push(Relation::new("mug_0", SpatialPredicate::On, "table_0"));
    ctx.scene.cameras.push(Camera { id: "cam0".into(), pose: Pose::at(1.5, 0.0, 1.2), fov_deg: 60.0 });
    ctx.scene.robot = Some(Robot {
        model: "franka".into(),
        base_pose: Pose::IDENTITY,
        joint_names: (0..7).map(|i| format!("joint_{i}")).collect(),
    });
    ctx
}

/// The named contexts of the intent corpus: `empty`, `kitchen` and `lab`
/// (the kitchen plus three successful pick_mug episodes).
pub fn corpus_context(name: &str) -> OperationalContext {
    match name {
        "empty" => OperationalContext::empty("s0"),
        "kitchen" => kitchen(),
        "lab" => {
            let mut ctx = kitchen();
            let mut r = rng(3);
            for k in 0..3 {
                let mut ep = random_episode(&mut r, &format!("pick_mug_ep{k:05}"), "pick_mug", 7);
                ep.success = true;
                ctx.data.episodes.push(ep);
            }
            ctx
        }
        other => panic!("unknown corpus context {other}"),
    }
}

/// A table with a mug on it, as a perception front end would report.
pub fn corpus_observation() -> ObservationDescriptor {
    ObservationDescriptor {
        objects: vec![
            ObservedObject { category: "table".into(), position: [0.0, 0.0, 0.0], relations: vec![] },
            ObservedObject { category: "mug".into(), position: [0.1, 0.0, 0.8], relations: vec![(SpatialPredicate::On, 0)] },
        ],
    }
}
