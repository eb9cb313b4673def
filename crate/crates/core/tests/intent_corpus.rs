//! Golden corpus: each command must parse, ground and derive exactly the
//! recorded intent. Set `CLAW_BLESS=1` to rewrite the file after review.

use std::path::PathBuf;

use claw_core::adapters::AssetLibrary;
use claw_core::intent::{
    parse_intent, DialogueContext, IntentError, IntentRepresentation, ObservationDescriptor, RejectingBackend, UserTurn,
};
use claw_core::testkit::{corpus_context, corpus_observation};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct Case {
    context: String,
    command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observation: Option<ObservationDescriptor>,
    expected: IntentRepresentation,
}

fn corpus_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/intents.json")
}

const COMMANDS: &[(&str, &str)] = &[
    ("empty", "CREATE scene WITH table"),
    ("empty", "CREATE scene WITH table, mug ON table"),
    ("empty", "create scene with mug on table, bowl near mug"),
    ("empty", "CREATE scene WITH plate LEFT_OF bowl, cube RIGHT_OF bowl"),
    ("empty", "CREATE scene WITH apple IN bowl SET lighting=0.5"),
    ("empty", "CREATE scene WITH table SET robot=franka, cameras=2"),
    ("empty", "CREATE scene WITH table SET camera.top.fov=75, lighting.color_temperature=4000"),
    ("empty", "CREATE scene WITH mug ON table, mug NOT IN bowl"),
    ("empty", "CREATE scene FROM observation"),
    ("empty", "CREATE scene WITH rare_lamp ON table"),
    ("kitchen", "EDIT scene SET lighting=0.3 PRESERVE all EXCEPT lighting"),
    ("kitchen", "EDIT scene REMOVE bowl"),
    ("kitchen", "EDIT scene REMOVE entity bowl PRESERVE mug, table"),
    ("kitchen", "EDIT scene REMOVE camera cam0"),
    ("kitchen", "EDIT scene REMOVE relation mug ON table"),
    ("kitchen", "EDIT scene WITH mug NEAR bowl PRESERVE all EXCEPT mug, relations"),
    ("kitchen", "EDIT scene WITH plate ON table PRESERVE all"),
    ("kitchen", "EDIT scene SET robot=ur5 PRESERVE lighting"),
    ("kitchen", "EDIT scene SET camera.cam0.fov=90 PRESERVE all EXCEPT camera cam0"),
    ("kitchen", "EDIT scene WITH teapot ON table"),
    ("kitchen", "EDIT model act CODE encoder, decoder"),
    ("kitchen", "COLLECT 10 episodes OF pick_mug"),
    ("kitchen", "COLLECT 5 OF task push_bowl EXPORT episode-folder"),
    ("kitchen", "COLLECT 20 episodes OF place_mug_on_table EXPORT hierarchical-container, sequential-record STABILITY 0.2"),
    ("lab", "CONVERT dataset pick_mug TO video-stub"),
    ("lab", "CONVERT pick_mug TO hierarchical-container, episode-folder, sequential-record, video-stub"),
    ("lab", "TRAIN act ON pick_mug"),
    ("lab", "TRAIN dp ON dataset pick_mug EPOCHS 5 TARGET 0.5 BUDGET 20"),
    ("kitchen", "EVALUATE act ON libero"),
    ("kitchen", "EVALUATE act, dp ON benchmark robotwin EPISODES 20 BUDGET 100"),
    ("kitchen", "INGEST drill"),
    ("empty", "INGEST teapot FROM catalog"),
];

fn parse(case_ctx: &str, command: &str, obs: Option<ObservationDescriptor>) -> Result<IntentRepresentation, IntentError> {
    let ctx = corpus_context(case_ctx);
    let turn = UserTurn { text: command.into(), observation: obs, attachments: vec![] };
    parse_intent(&turn, &DialogueContext::default(), &ctx, &AssetLibrary::builtin(), &RejectingBackend)
}

#[test]
fn golden_corpus() {
    let bless = std::env::var("CLAW_BLESS").is_ok_and(|v| v == "1");
    if bless {
        let cases: Vec<Case> = COMMANDS
            .iter()
            .map(|(c, cmd)| {
                let obs = cmd.contains("FROM observation").then(corpus_observation);
                let expected = parse(c, cmd, obs.clone()).unwrap_or_else(|e| panic!("{cmd}: {e}"));
                Case { context: c.to_string(), command: cmd.to_string(), observation: obs, expected }
            })
            .collect();
        std::fs::create_dir_all(corpus_path().parent().unwrap()).unwrap();
        std::fs::write(corpus_path(), serde_json::to_string_pretty(&cases).unwrap() + "\n").unwrap();
    }
    let cases: Vec<Case> = serde_json::from_str(&std::fs::read_to_string(corpus_path()).unwrap()).unwrap();
    assert!(cases.len() >= 30);
    for case in cases {
        let got = parse(&case.context, &case.command, case.observation).unwrap_or_else(|e| panic!("{}: {e}", case.command));
        assert_eq!(got, case.expected, "{}", case.command);
    }
}

#[test]
fn rejections_carry_grammar_hint() {
    for (ctx, cmd) in [
        ("empty", "make me a kitchen"),
        ("empty", "CREATE scene WITH Mug!"),
        ("empty", "COLLECT many OF pick_mug"),
        ("empty", "CREATE scene SET lighting=2"),
        ("empty", "CONVERT pick_mug TO parquet"),
        ("empty", "   "),
    ] {
        match parse(ctx, cmd, None) {
            Err(IntentError::UnparsableIntent { hint, .. }) => assert!(hint.contains("CREATE scene"), "{cmd}"),
            other => panic!("{cmd}: expected UnparsableIntent, got {other:?}"),
        }
    }
}

#[test]
fn grounding_errors() {
    let cases: &[(&str, &str, fn(&IntentError) -> bool)] = &[
        ("kitchen", "EDIT scene REMOVE plate", |e| matches!(e, IntentError::UnknownReference { .. })),
        ("empty", "CREATE scene WITH unicorn", |e| matches!(e, IntentError::UnknownReference { .. })),
        ("kitchen", "TRAIN act ON pick_cube", |e| matches!(e, IntentError::UnknownReference { .. })),
        ("kitchen", "EVALUATE act ON atari", |e| matches!(e, IntentError::UnknownReference { .. })),
        ("empty", "CREATE scene WITH mug ON table, mug NOT ON table", |e| matches!(e, IntentError::InconsistentGoal(_))),
        ("kitchen", "EDIT scene SET lighting=0.1 PRESERVE lighting", |e| matches!(e, IntentError::InconsistentGoal(_))),
    ];
    for (ctx, cmd, check) in cases {
        let err = parse(ctx, cmd, None).expect_err(cmd);
        assert!(check(&err), "{cmd}: {err:?}");
    }
}
