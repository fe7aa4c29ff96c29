use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use delib_core::distill::ReportStyle;
use delib_core::ids::{DiscussionId, EventId, SessionId};
use delib_core::import::PatchOp;
use delib_core::reflection::{parse_replay, ReflectionConfig, ReflectionDeck};
use delib_core::service::auth::Auth;
use delib_core::service::http::{self, AppState};
use delib_core::service::{replay, AdmissionKind, Command, ErrorBody, ErrorClass, EventClock, Platform, ServiceConfig, ServiceError, Store};
use delib_core::transcript::TranscriptInput;

#[derive(Parser)]
#[command(name = "delib", version, about = "Deliberation engine: service and pipeline commands")]
struct Cli {
    /// TOML config file; DELIB_* variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Mock models, logical clock and trusted event times (reproducible runs).
    #[arg(long, global = true)]
    mock_gateway: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    CreateDiscussion {
        #[arg(long)]
        title: String,
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "curator")]
        author: String,
    },
    /// Upload a transcript and open an import session for it.
    IngestTranscript {
        file: PathBuf,
        #[arg(long)]
        discussion: String,
        #[arg(long, default_value = "curator")]
        actor: String,
    },
    Analyze {
        session: String,
        #[arg(long, default_value = "curator")]
        actor: String,
    },
    /// Apply a JSON array of draft patch operations.
    Edit {
        session: String,
        #[arg(long)]
        patch: PathBuf,
        #[arg(long, default_value = "curator")]
        curator: String,
    },
    Approve {
        session: String,
        #[arg(long, default_value = "curator")]
        curator: String,
    },
    Reject {
        session: String,
        #[arg(long)]
        reason: String,
        #[arg(long, default_value = "curator")]
        curator: String,
    },
    Merge {
        session: String,
        #[arg(long, default_value = "curator")]
        actor: String,
    },
    /// Cluster at k and record the recommendations distilled from it.
    Cluster {
        discussion: String,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=8))]
        k: u8,
        #[arg(long)]
        threshold: Option<f64>,
        /// Only show the clusters.
        #[arg(long)]
        no_distill: bool,
    },
    Report {
        discussion: String,
        #[arg(long, default_value = "executive")]
        style: ReportStyle,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    CreateEvent {
        event: String,
        #[arg(long)]
        deck: PathBuf,
        #[arg(long)]
        title: String,
        /// Transcript file to upload and link alerts against.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Replay newline-delimited reflections, paced by their timestamps.
    SimulateEvent {
        event: String,
        #[arg(long)]
        replay: PathBuf,
        /// Playback speed; 10 runs ten times faster than the event.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long)]
        no_close: bool,
    },
    /// Replay the store and check every integrity invariant.
    VerifyStore,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let body = ErrorBody { error: ErrorClass::BadRequest, invariant: "cli.usage".into(), message: e.render().to_string().trim().to_string() };
            emit_error(&body);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(&e.body());
            ExitCode::FAILURE
        }
    }
}

fn emit_error(body: &ErrorBody) {
    eprintln!("{}", serde_json::to_string(body).expect("error body serializes"));
}

fn print(v: &impl Serialize) -> Result<(), ServiceError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| ServiceError::Storage(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| ServiceError::Storage(e.to_string()))
}

fn read_file(path: &Path) -> Result<Vec<u8>, ServiceError> {
    std::fs::read(path).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))
}

fn config(cli: &Cli) -> Result<ServiceConfig, ServiceError> {
    let mut c = match &cli.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    c.apply_env(|k| std::env::var(k).ok())?;
    if let Some(d) = &cli.data_dir {
        c.data_dir = Some(d.clone());
    }
    if cli.mock_gateway {
        c = c.deterministic();
    }
    Ok(c)
}

fn open(config: ServiceConfig) -> Result<Platform, ServiceError> {
    if config.data_dir.is_none() {
        return Err(ServiceError::Config("no data directory; pass --data-dir or set DELIB_DATA_DIR".into()));
    }
    let p = Platform::open(config)?;
    if p.recovery().dropped_bytes > 0 {
        log::warn!("dropped {} bytes of a torn final record", p.recovery().dropped_bytes);
    }
    Ok(p)
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    let mut cfg = config(&cli)?;
    match cli.command {
        Cmd::Serve { bind } => {
            if let Some(b) = bind {
                cfg.bind = b;
            }
            serve(cfg)
        }
        Cmd::CreateDiscussion { title, question, author } => {
            let d = open(cfg)?.create_discussion(&title, &question, &author)?;
            print(&json!({ "discussion_id": d }))
        }
        Cmd::IngestTranscript { file, discussion, actor } => {
            let p = open(cfg)?;
            let input = TranscriptInput::from_json(&read_file(&file)?)?;
            let t = p.upload_transcript(input)?;
            let s = p.start_import(&t, &DiscussionId::from(discussion), &actor)?;
            print(&json!({ "transcript_id": t, "session_id": s }))
        }
        Cmd::Analyze { session, actor } => print(&open(cfg)?.analyze(&SessionId::from(session), &actor)?),
        Cmd::Edit { session, patch, curator } => {
            let patch: Vec<PatchOp> =
                serde_json::from_slice(&read_file(&patch)?).map_err(|e| ServiceError::BadRequest(format!("patch: {e}")))?;
            print(&open(cfg)?.execute(&Command::EditDraft { session_id: session.into(), patch, curator })?)
        }
        Cmd::Approve { session, curator } => print(&open(cfg)?.execute(&Command::Approve { session_id: session.into(), curator })?),
        Cmd::Reject { session, reason, curator } => {
            print(&open(cfg)?.execute(&Command::Reject { session_id: session.into(), curator, reason })?)
        }
        Cmd::Merge { session, actor } => print(&open(cfg)?.execute(&Command::Merge { session_id: session.into(), actor })?),
        Cmd::Cluster { discussion, k, threshold, no_distill } => {
            let p = open(cfg)?;
            let d = DiscussionId::from(discussion);
            let view = p.clusters(&d, k as usize)?;
            let clusters: Vec<Value> = view
                .labels
                .iter()
                .map(|l| json!({ "cluster": l.cluster_index, "title": l.title, "members": l.member_ids.len() }))
                .collect();
            let recommendations = if no_distill { None } else { Some(p.distill(&d, k as usize, threshold)?) };
            print(&json!({
                "discussion_id": d,
                "k": view.k,
                "objective": view.model.objective_trace.last(),
                "clusters": clusters,
                "recommendations": recommendations,
            }))
        }
        Cmd::Report { discussion, style, format, out } => {
            let r = open(cfg)?.report(&discussion.into(), style)?;
            let text = match format {
                Format::Markdown => r.to_markdown(),
                Format::Json => serde_json::to_string_pretty(&r).expect("report serializes") + "\n",
            };
            match out {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| ServiceError::Storage(format!("{}: {e}", path.display())))?;
                    print(&json!({ "out": path, "sections": r.sections.len() }))
                }
                None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| ServiceError::Storage(e.to_string())),
            }
        }
        Cmd::CreateEvent { event, deck, title, transcript } => {
            let p = open(cfg)?;
            let deck: ReflectionDeck =
                serde_json::from_slice(&read_file(&deck)?).map_err(|e| ServiceError::BadRequest(format!("deck: {e}")))?;
            // parse every input before the first command is logged
            let transcript = match transcript {
                Some(path) => Some(TranscriptInput::from_json(&read_file(&path)?)?),
                None => None,
            };
            let event_id = EventId::from(event);
            p.execute(&Command::CreateEvent { event_id: event_id.clone(), title, deck, config: ReflectionConfig::default() })?;
            let transcript_id = match transcript {
                Some(input) => {
                    let t = p.upload_transcript(input)?;
                    p.execute(&Command::AttachEventTranscript { event_id: event_id.clone(), transcript_id: t.clone() })?;
                    Some(t)
                }
                None => None,
            };
            print(&json!({ "event_id": event_id, "transcript_id": transcript_id }))
        }
        Cmd::SimulateEvent { event, replay, speed, no_close } => {
            if !(speed.is_finite() && speed > 0.0) {
                return Err(ServiceError::BadRequest(format!("speed must be a positive number, got {speed}")));
            }
            // replayed timestamps are historical, never wall-clock checked
            cfg.event_clock = EventClock::Trusted;
            simulate(&open(cfg)?, event.into(), &replay, speed, !no_close)
        }
        Cmd::VerifyStore => verify_store(&cfg),
    }
}

fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let auth = Auth::from_env(&cfg.tokens, |k| std::env::var(k).ok())?;
    if auth.is_empty() {
        log::warn!("no tokens configured; every request will be rejected");
    }
    if cfg.data_dir.is_none() {
        log::warn!("no data directory; state lives in memory only");
    }
    let bind = cfg.bind.clone();
    let platform = Arc::new(Platform::open(cfg)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| ServiceError::Storage(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await.map_err(|e| ServiceError::Config(format!("bind {bind}: {e}")))?;
        log::info!("listening on {}", listener.local_addr().map_or(bind.clone(), |a| a.to_string()));
        http::serve(AppState { platform, auth: Arc::new(auth) }, listener).await.map_err(|e| ServiceError::Storage(e.to_string()))
    })
}

#[derive(Serialize, Default)]
struct SimulationSummary {
    events: usize,
    accepted: usize,
    duplicates: usize,
    rejected: usize,
    alerts: usize,
    prompts: usize,
    elapsed_ms: u128,
}

fn simulate(p: &Platform, event: EventId, path: &Path, speed: f64, close: bool) -> Result<(), ServiceError> {
    let text = String::from_utf8(read_file(path)?).map_err(|e| ServiceError::BadRequest(format!("replay: {e}")))?;
    let events = parse_replay(&text)?;
    let mut sum = SimulationSummary { events: events.len(), ..Default::default() };
    let start = Instant::now();
    for e in events {
        if e.event_id != event {
            return Err(ServiceError::BadRequest(format!("replay line for event {} in a replay of {event}", e.event_id)));
        }
        let due = Duration::from_secs_f64(e.t_ms as f64 / 1000.0 / speed);
        if let Some(wait) = due.checked_sub(start.elapsed()) {
            std::thread::sleep(wait);
        }
        match p.reflect(e) {
            Ok(r) => {
                match r.admission {
                    AdmissionKind::Accepted => sum.accepted += 1,
                    AdmissionKind::Duplicate => sum.duplicates += 1,
                }
                sum.alerts += r.alerts.len();
                sum.prompts += r.prompts.len();
            }
            Err(ServiceError::Reflection(err)) => {
                log::warn!("reflection rejected: {err}");
                sum.rejected += 1;
            }
            Err(other) => return Err(other),
        }
    }
    if close {
        let r = p.close_event(&event, None)?;
        sum.alerts += r.alerts.len();
        sum.prompts += r.prompts.len();
    }
    sum.elapsed_ms = start.elapsed().as_millis();
    print(&sum)
}

/// Read-only: never repairs a torn tail, only reports it.
fn verify_store(cfg: &ServiceConfig) -> Result<(), ServiceError> {
    let root = cfg.data_dir.as_ref().ok_or_else(|| ServiceError::Config("no data directory; pass --data-dir or set DELIB_DATA_DIR".into()))?;
    let loaded = Store::load(root, false)?;
    let snapshot_seq = loaded.snapshot.as_ref().map(|s| s.seq);
    let state = replay(loaded.snapshot.unwrap_or_default(), &loaded.records)?;
    let violations = state.verify();
    print(&json!({
        "seq": state.seq,
        "snapshot_seq": snapshot_seq,
        "replayed": loaded.records.len(),
        "torn_tail_bytes": loaded.dropped_bytes,
        "violations": violations,
    }))?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ServiceError::CorruptLog(format!("{} integrity violation(s)", violations.len())))
    }
}
