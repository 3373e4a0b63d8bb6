use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use clickcast::commands::{self, CliError, SimulateConfig};
use clickcast::params::ParamArgs;
use clickcast::service;
use clickcast_core::simulator::{TaskKind, STUDY_COLORS, STUDY_MARKS};

#[derive(Parser)]
#[command(name = "clickcast", version, about = "Predict the next marks a visualization user will click")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a click log and score each prediction against the next click.
    Replay {
        /// Visualization spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Click log (JSON lines with a mark_id per line).
        #[arg(long)]
        log: PathBuf,
        /// Per-step CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Generate a synthetic dataset and users, then evaluate the filter.
    Simulate {
        #[arg(long, default_value_t = 10)]
        geo: usize,
        #[arg(long = "type", default_value_t = 10)]
        type_: usize,
        #[arg(long, default_value_t = 10)]
        mixed: usize,
        #[arg(long, default_value_t = STUDY_MARKS)]
        marks: usize,
        #[arg(long, default_value_t = STUDY_COLORS)]
        colors: u32,
        /// Seed of the dataset, the tasks and the simulated users.
        #[arg(long, default_value_t = 7)]
        data_seed: u64,
        /// Directory for summary.csv, steps.csv and curve.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory to write spec.json and logs/<kind>_<id>.jsonl into.
        #[arg(long)]
        export_dir: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Evaluate the filter on a directory of <kind>_<id>.jsonl click logs.
    Evaluate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        logs: PathBuf,
        /// Directory for summary.csv, steps.csv and curve.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Seconds of inactivity after which a session is dropped.
        #[arg(long, default_value_t = service::DEFAULT_IDLE_TIMEOUT.as_secs())]
        idle_timeout: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let write_err = |e: std::io::Error| CliError::Io {
        context: "writing to stdout".into(),
        source: e,
    };
    match cli.command {
        Command::Replay { spec, log, out, params } => {
            let params = params.to_params()?;
            let space = commands::load_space(&spec)?;
            let clicks = commands::load_log(&log, &space)?;
            let report = commands::replay(&space, &clicks, &params)?;
            report.render(stdout.lock()).map_err(write_err)?;
            if let Some(path) = out {
                commands::write_replay_csv(&report, &path)?;
            }
        }
        Command::Simulate { geo, type_, mixed, marks, colors, data_seed, out, export_dir, params } => {
            let params = params.to_params()?;
            let cfg = SimulateConfig {
                marks,
                colors,
                data_seed,
                sessions: vec![(TaskKind::Geo, geo), (TaskKind::Type, type_), (TaskKind::Mixed, mixed)],
            };
            let sim = commands::simulate_sessions(&cfg)?;
            if let Some(dir) = export_dir {
                commands::export_sessions(&dir, &sim.space, &sim.sessions)?;
            }
            let report = commands::evaluate_sessions(&sim.space, &sim.sessions, &params)?;
            commands::render_summary(&report, stdout.lock()).map_err(write_err)?;
            if let Some(dir) = out {
                commands::write_report(&dir, &report)?;
            }
        }
        Command::Evaluate { spec, logs, out, params } => {
            let params = params.to_params()?;
            let space = commands::load_space(&spec)?;
            let sessions = commands::load_sessions(&logs, &space)?;
            let report = commands::evaluate_sessions(&space, &sessions, &params)?;
            commands::render_summary(&report, stdout.lock()).map_err(write_err)?;
            if let Some(dir) = out {
                commands::write_report(&dir, &report)?;
            }
        }
        Command::Serve { addr, idle_timeout } => serve(addr, Duration::from_secs(idle_timeout))?,
    }
    stdout.lock().flush().map_err(write_err)
}

fn serve(addr: SocketAddr, idle_timeout: Duration) -> Result<(), CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io {
        context: "starting runtime".into(),
        source: e,
    })?;
    runtime.block_on(async move {
        let state = service::AppState::new(idle_timeout);
        service::spawn_reaper(state.clone());
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Io {
            context: format!("binding {addr}"),
            source: e,
        })?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Io {
                context: "serving".into(),
                source: e,
            })
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
