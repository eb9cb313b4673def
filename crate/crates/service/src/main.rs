use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use claw_core::adapters::AssetLibrary;
use claw_core::data::{export, FormatId};
use claw_core::intent::{parse_intent, DialogueContext, RejectingBackend, UserTurn};
use claw_core::planner::{dry_run, plan, AbstractState, CostModel};
use claw_core::skills::SkillLibrary;
use claw_core::state::OperationalContext;
use claw_service::events::read_log;
use claw_service::{replay_file, EventKind, Service, SessionError};

#[derive(Parser)]
#[command(name = "claw", version, about = "Conversational workflow engine for scenes, datasets and models")]
struct Cli {
    /// Root of sessions, snapshots, exports and the asset store.
    #[arg(long, env = "CLAW_DATA_DIR", default_value = "claw-data", global = true)]
    data_dir: PathBuf,
    /// Seed for new sessions.
    #[arg(long, env = "CLAW_SEED", default_value_t = 0, global = true)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Run a file of DSL turns in a new session, one turn per line.
    Run {
        #[arg(long)]
        script: PathBuf,
        /// Approve every proposed plan; without it plans are only proposed.
        #[arg(long)]
        auto_approve: bool,
    },
    /// Plan one command against a session's context (empty by default).
    Plan {
        command: String,
        #[arg(long)]
        session: Option<String>,
        /// Print per-step abstract deltas and predicted deviation.
        #[arg(long)]
        dry_run: bool,
    },
    /// Print a session's step records as JSON lines.
    Trace { session: String },
    /// Export a session's successful episodes of a task.
    Export {
        #[arg(long)]
        session: String,
        #[arg(long)]
        task: String,
        #[arg(long)]
        format: FormatId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a session from its event log and compare head hashes.
    Replay { session: String },
}

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)?
    };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A reader such as `head` went away; that is not a failure.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Serve { port, host } => {
            let service = Arc::new(Service::open(&cli.data_dir, cli.seed)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, claw_service::http::router(service)).await
            })?;
        }
        Command::Run { script, auto_approve } => {
            let text = std::fs::read_to_string(&script)?;
            let service = Service::open(&cli.data_dir, cli.seed)?;
            let handle = service.create_session(None)?;
            let id = handle.state().session_id;
            out!("session {id}");
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                out!("> {line}");
                let out = handle.turn(UserTurn::text(line))?;
                out!("  plan {}: {}", out.plan_id, out.workflow.calls.iter().map(|c| c.label()).collect::<Vec<_>>().join(", "));
                out!("  predicted J={:.3} d={:.3}", out.objective.objective, out.objective.deviation);
                if !auto_approve {
                    continue;
                }
                let trace = handle.approve(&out.plan_id)?;
                let d = trace.deviation.as_ref().map_or(f64::NAN, |d| d.total);
                out!("  {} in {} step record(s), d={d:.6}", json(&trace.status).trim_matches('"'), trace.records.len());
            }
            out!("head {}", handle.state().head);
        }
        Command::Plan { command, session, dry_run: show_deltas } => {
            let (ctx, assets) = match session {
                Some(id) => {
                    let service = Service::open(&cli.data_dir, cli.seed)?;
                    let h = service.session(&id)?;
                    let s = h.lock()?;
                    (s.context().clone(), s.assets().clone())
                }
                None => (OperationalContext::empty("plan"), AssetLibrary::builtin()),
            };
            let lib = SkillLibrary::builtin();
            let cost = CostModel::default();
            let intent = parse_intent(&UserTurn::text(command), &DialogueContext::default(), &ctx, &assets, &RejectingBackend)?;
            let wf = plan(&intent, &intent.goal, &ctx, &lib, &assets, &cost)?;
            if show_deltas {
                let dr = dry_run(&wf, &AbstractState::from_context(&ctx, &assets), &lib, &cost)?;
                out!("{}", json(&dr));
            } else {
                out!("{}", json(&wf));
            }
        }
        Command::Trace { session } => {
            let service = Service::open(&cli.data_dir, cli.seed)?;
            for (_, e) in read_log(&service.session_dir(&session).join("events.jsonl")).map_err(SessionError::from)? {
                if let EventKind::StepCompleted { record, .. } = e.kind {
                    out!("{}", serde_json::to_string(&record)?);
                }
            }
        }
        Command::Export { session, task, format, out } => {
            let service = Service::open(&cli.data_dir, cli.seed)?;
            let h = service.session(&session)?;
            let episodes: Vec<_> = h.lock()?.context().data.episodes_of(&task).filter(|e| e.success).cloned().collect();
            if episodes.is_empty() {
                return Err(format!("session {session} has no successful episodes of {task}").into());
            }
            let manifest = export(&episodes, format, &out)?;
            out!("{}", json(&manifest));
        }
        Command::Replay { session } => {
            let service = Service::open(&cli.data_dir, cli.seed)?;
            let outcome = replay_file(&service.session_dir(&session).join("events.jsonl"), service.data_dir())?;
            out!("events {}", outcome.events);
            out!("head {}", outcome.head);
            if outcome.head != outcome.recorded_head {
                return Err(format!("replayed head {} differs from recorded {}", outcome.head, outcome.recorded_head).into());
            }
            out!("matches recorded head");
        }
    }
    Ok(())
}
