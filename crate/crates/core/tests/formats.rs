use claw_core::data::{export, import, read_manifest, validate_format, DataError, FormatId};
use claw_core::deviation::data_deviation;
use claw_core::intent::{DataGoals, GoalSpec};
use claw_core::state::DataState;
use claw_core::testkit::{random_episode_set, rng};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..50 {
        let mut set = random_episode_set(seed);
        set.sort_by(|a, b| a.id.cmp(&b.id));
        for f in FormatId::ALL {
            let dest = dir.path().join(format!("{seed}/{f}"));
            let m = export(&set, f, &dest).unwrap();
            assert!(validate_format(&m).is_clean(), "seed {seed} {f}");
            assert_eq!(import(&m).unwrap(), set, "seed {seed} {f}");
            assert_eq!(read_manifest(&dest).unwrap(), m);
        }
    }
}

#[test]
fn export_bytes_depend_only_on_contents() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        let set = random_episode_set(seed);
        let mut reversed = set.clone();
        reversed.reverse();
        for f in FormatId::ALL {
            let a = export(&set, f, &dir.path().join(format!("a{seed}{f}"))).unwrap();
            let b = export(&reversed, f, &dir.path().join(format!("b{seed}{f}"))).unwrap();
            assert_eq!(a.files, b.files);
        }
    }
}

#[test]
fn every_corrupted_byte_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let mut detected = 0;
    let mut total = 0;
    for seed in 0..50 {
        let set = random_episode_set(seed);
        let mut r = rng(seed ^ 0xC0FFEE);
        for f in FormatId::ALL {
            let dest = dir.path().join(format!("{seed}/{f}"));
            let m = export(&set, f, &dest).unwrap();
            let victim = &m.files[r.gen_range(0..m.files.len())];
            let path = dest.join(&victim.path);
            let mut bytes = std::fs::read(&path).unwrap();
            let at = r.gen_range(0..bytes.len());
            bytes[at] ^= 1 << r.gen_range(0..8);
            std::fs::write(&path, bytes).unwrap();
            total += 1;
            let report = validate_format(&m);
            let import_fails = matches!(import(&m), Err(DataError::ChecksumMismatch { ref file }) if *file == victim.path);
            if import_fails && report.violations.iter().any(|v| v.file == victim.path && v.rule == "checksum-match") {
                detected += 1;
            }
        }
    }
    assert_eq!(detected, total);
}

#[test]
fn missing_file_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let m = export(&random_episode_set(3), FormatId::EpisodeFolder, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(&m.files[0].path)).unwrap();
    let report = validate_format(&m);
    assert!(report.violations.iter().any(|v| v.rule == "file-present"));
    assert!(import(&m).is_err());
}

#[test]
fn format_term_agrees_with_validator() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..20 {
        let mut set = random_episode_set(seed);
        for ep in &mut set {
            ep.success = true;
        }
        let mut r = rng(seed);
        let f = FormatId::ALL[r.gen_range(0..4)];
        let m = export(&set, f, &dir.path().join(format!("{seed}"))).unwrap();
        if seed % 2 == 1 {
            let path = dir.path().join(format!("{seed}")).join(&m.files[0].path);
            let mut bytes = std::fs::read(&path).unwrap();
            bytes.push(b'\n');
            std::fs::write(&path, bytes).unwrap();
        }
        let mut data = DataState { episodes: set.clone(), ..DataState::default() };
        data.exports.insert(f, m.clone());
        let goal = GoalSpec {
            data_goals: Some(DataGoals {
                task: set[0].task_id.clone(),
                min_episodes: 0,
                formats: [f].into(),
                stability_threshold: None,
            }),
            ..GoalSpec::default()
        };
        let report = validate_format(&m);
        assert_eq!(data_deviation(&data, &goal).2, report.ratio(), "seed {seed}");
        assert_eq!(report.is_clean(), seed % 2 == 0);
    }
}

#[test]
fn unknown_format_is_unsupported() {
    assert!(matches!("parquet".parse::<FormatId>(), Err(DataError::UnsupportedFormat(_))));
    for f in FormatId::ALL {
        assert_eq!(f.as_str().parse::<FormatId>().unwrap(), f);
    }
}

#[test]
fn invalid_episodes_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = random_episode_set(4);
    set[0].length += 1;
    assert!(matches!(export(&set, FormatId::SequentialRecord, dir.path()), Err(DataError::InvalidEpisode { .. })));
    let mut dup = random_episode_set(4);
    dup.push(dup[0].clone());
    assert!(matches!(export(&dup, FormatId::SequentialRecord, dir.path()), Err(DataError::InvalidEpisode { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_seed_round_trips(seed in any::<u64>(), k in 0usize..4) {
        let dir = tempfile::tempdir().unwrap();
        let mut set = random_episode_set(seed);
        set.sort_by(|a, b| a.id.cmp(&b.id));
        let m = export(&set, FormatId::ALL[k], dir.path()).unwrap();
        prop_assert_eq!(import(&m).unwrap(), set);
    }
}
