use claw_core::state::{
    canonical_serialize, deserialize_canonical, validate_context, OperationalContext, Pose, Provenance, SnapshotStore, StateError,
};
use claw_core::testkit::{add_entity, random_episode, random_scene, rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn random_context(seed: u64) -> OperationalContext {
    let mut r = rng(seed);
    let mut ctx = random_scene(&mut r);
    for k in 0..(seed % 3) {
        let ep = random_episode(&mut r, &format!("pick_mug_ep{k:05}"), "pick_mug", 3);
        let prov = Provenance { scene_id: ctx.scene.scene_id.clone(), scene_version: ctx.scene.version, seed: ep.seed };
        ctx.data.provenance.insert(ep.id.clone(), prov);
        ctx.data.episodes.push(ep);
    }
    ctx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn canonical_bytes_round_trip(seed in any::<u64>()) {
        let ctx = random_context(seed);
        let bytes = canonical_serialize(&ctx).unwrap();
        let back = deserialize_canonical(&bytes).unwrap();
        prop_assert_eq!(canonical_serialize(&back).unwrap(), bytes);
        prop_assert_eq!(back.content_hash().unwrap(), ctx.content_hash().unwrap());
    }

    #[test]
    fn hash_ignores_list_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let ctx = random_context(seed);
        let mut shuffled = ctx.clone();
        let mut r = rng(shuffle);
        shuffled.scene.entities.shuffle(&mut r);
        shuffled.scene.cameras.shuffle(&mut r);
        shuffled.data.episodes.shuffle(&mut r);
        prop_assert_eq!(shuffled.content_hash().unwrap(), ctx.content_hash().unwrap());
    }

    #[test]
    fn snapshot_restore_is_exact(seed in any::<u64>()) {
        let store = SnapshotStore::in_memory();
        let ctx = random_context(seed);
        let id = store.snapshot(&ctx).unwrap();
        let again = store.snapshot(&ctx).unwrap();
        prop_assert_eq!(&id, &again);
        prop_assert_eq!(store.len(), 1);
        let restored = store.restore(&id).unwrap();
        prop_assert_eq!(&canonical_serialize(&restored).unwrap()[..], &store.bytes(&id).unwrap()[..]);
    }

    #[test]
    fn random_scenes_validate(seed in any::<u64>()) {
        prop_assert!(validate_context(&random_context(seed)).is_empty());
    }
}

#[test]
fn signed_zero_does_not_change_the_hash() {
    let mut a = OperationalContext::empty("s");
    add_entity(&mut a, "mug");
    let mut b = a.clone();
    b.scene.entities[0].pose.position[1] = -0.0;
    assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
}

#[test]
fn tampered_snapshot_is_refused() {
    let store = SnapshotStore::in_memory();
    let id = store.snapshot(&random_context(1)).unwrap();
    let mut bytes = store.bytes(&id).unwrap().to_vec();
    bytes[10] ^= 1;
    store.tamper(&id, bytes);
    assert!(matches!(store.restore(&id), Err(StateError::CorruptSnapshot { .. })));
}

#[test]
fn directory_store_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<_> = {
        let store = SnapshotStore::open(dir.path()).unwrap();
        (0..5).map(|s| store.snapshot(&random_context(s)).unwrap()).collect()
    };
    let store = SnapshotStore::open(dir.path()).unwrap();
    for id in ids {
        assert_eq!(store.restore(&id).unwrap().content_hash().unwrap(), id);
    }
}

#[test]
fn quaternion_ingest_tolerance() {
    assert!(Pose::ingest([0.0; 3], [1.0005, 0.0, 0.0, 0.0]).is_ok());
    let p = Pose::ingest([0.0; 3], [1.0005, 0.0, 0.0, 0.0]).unwrap();
    assert!((p.orientation[0] - 1.0).abs() < 1e-12);
    assert!(matches!(Pose::ingest([0.0; 3], [1.1, 0.0, 0.0, 0.0]), Err(StateError::NonUnitQuaternion { .. })));
    assert!(Pose::ingest([0.0; 3], [f64::NAN, 0.0, 0.0, 0.0]).is_err());
}

#[test]
fn dangling_relation_is_invalid() {
    let mut ctx = OperationalContext::empty("s");
    add_entity(&mut ctx, "mug");
    ctx.scene.relations.push(claw_core::state::Relation::new("mug_0", claw_core::state::SpatialPredicate::On, "table_9"));
    let v = validate_context(&ctx);
    assert!(v.iter().any(|v| v.rule == "relation-endpoint-exists"));
}
