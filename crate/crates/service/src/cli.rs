use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use llmscape_core::gateway::{Backend, LiveBackend, LiveConfig, ScriptedBackend};
use llmscape_core::replay::replay;
use llmscape_core::scenario::Scenario;
use llmscape_core::session_log::{summarize_file, FileSink};
use llmscape_core::sim::{ImportanceMode, Simulation};

use crate::session::{launch, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "llmscape", version, about = "Sandbox island of language-model agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Scripted,
    Live,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a session.
    Run(RunArgs),
    /// Re-run a recorded scripted session and compare it line by line.
    Replay {
        log: PathBuf,
        /// Scenario name or file; defaults to the one named in the log.
        #[arg(long)]
        scenario: Option<String>,
        /// Reply script; defaults to the scenario's own.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Print entry counts for a log file as JSON.
    Summarize { log: PathBuf },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Scenario name (`default`) or path to a TOML file.
    #[arg(long, default_value = "default")]
    pub scenario: String,
    /// Session seed; defaults to the scenario's.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "scripted")]
    pub backend: BackendKind,
    /// Reply script for the scripted backend; defaults to the scenario's.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Number of ticks; without it the session runs until interrupted.
    #[arg(long)]
    pub ticks: Option<u64>,
    /// Run without pacing for observers.
    #[arg(long)]
    pub headless: bool,
    #[arg(long, default_value = "session.jsonl")]
    pub log: PathBuf,
    /// Serve the HTTP and WebSocket interface on this address.
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    /// Milliseconds between ticks; 0 when headless, 500 otherwise.
    #[arg(long)]
    pub tick_ms: Option<u64>,
    /// Terrain block size in state snapshots.
    #[arg(long, default_value_t = 1)]
    pub snapshot_factor: usize,
}

pub fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Replay { log, scenario, script } => replay_log(&log, scenario.as_deref(), script.as_deref()),
        Command::Summarize { log } => {
            let summary = summarize_file(&log).with_context(|| format!("summarizing {}", log.display()))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn scripted_backend(scenario: &Scenario, script: Option<&Path>) -> anyhow::Result<ScriptedBackend> {
    Ok(match script {
        Some(path) => ScriptedBackend::from_file(path).with_context(|| format!("loading {}", path.display()))?,
        None => match scenario.script_text()? {
            Some(text) => ScriptedBackend::parse(&text)?,
            None => ScriptedBackend::new(),
        },
    })
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    if args.headless && args.ticks.is_none() && args.listen.is_none() {
        bail!("a headless run without --listen needs --ticks");
    }
    if !args.headless && args.listen.is_none() {
        bail!("an interactive run needs --listen (or pass --headless)");
    }
    let scenario = Scenario::load(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let backend: Box<dyn Backend> = match args.backend {
        BackendKind::Scripted => Box::new(scripted_backend(&scenario, args.script.as_deref())?),
        BackendKind::Live => Box::new(LiveBackend::new(LiveConfig::from_env()?)),
    };
    let mut sim = Simulation::new(&scenario, seed, backend)?;
    if args.backend == BackendKind::Live {
        sim.set_importance_mode(ImportanceMode::Backend);
    }
    let sink = FileSink::create(&args.log).with_context(|| format!("creating {}", args.log.display()))?;
    sim.add_log_sink(sink);

    let Some(addr) = args.listen else {
        let ticks = args.ticks.unwrap_or_default();
        let digest = sim.run(ticks)?;
        println!("log {}", args.log.display());
        println!("digest {digest}");
        return Ok(ExitCode::SUCCESS);
    };

    let default_ms = if args.headless { 0 } else { 500 };
    let opts = RunOptions {
        ticks: args.ticks,
        tick_interval: Duration::from_millis(args.tick_ms.unwrap_or(default_ms)),
        snapshot_factor: args.snapshot_factor,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let bound = listener.local_addr()?;
        let (session, thread) = launch(sim, opts);
        println!("listening on {bound}");
        tracing::info!(%bound, "serving");
        let app = crate::api::router(session.clone());
        let server = tokio::spawn(async move { axum::serve(listener, app).await });
        tokio::signal::ctrl_c().await?;
        session.stop();
        let digest = tokio::task::spawn_blocking(move || thread.join())
            .await?
            .map_err(|_| anyhow::anyhow!("session thread panicked"))??;
        server.abort();
        println!("log {}", args.log.display());
        println!("digest {digest}");
        Ok(ExitCode::SUCCESS)
    })
}

fn replay_log(log: &Path, scenario: Option<&str>, script: Option<&Path>) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
    let entries = llmscape_core::replay::parse_log(&text)?;
    let header = llmscape_core::replay::read_header(&entries)?;
    let scenario = Scenario::load(scenario.unwrap_or(&header.scenario))?;
    let backend = scripted_backend(&scenario, script)?;
    let report = replay(&text, &scenario, Box::new(backend))?;
    println!(
        "replayed {} ticks, compared {} lines",
        report.ticks, report.lines_compared
    );
    if let Some(d) = &report.divergence {
        println!("first divergence at seq {}", d.seq);
        println!("recorded: {}", d.recorded.as_deref().unwrap_or("<missing>"));
        println!("replayed: {}", d.replayed.as_deref().unwrap_or("<missing>"));
    }
    match &report.header.digest {
        Some(_) => println!(
            "digest {} ({})",
            report.replayed_digest,
            if report.digest_matches() { "matches" } else { "differs" }
        ),
        None => println!("digest {} (log has no closing digest)", report.replayed_digest),
    }
    Ok(if report.is_faithful() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
