//! `socsim`: simulate sandpiles and spring-block quakes, fit their
//! statistics, turn cascades into sound, and serve live sessions.

mod batch;
mod error;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "socsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model and write its events as JSON lines plus a final snapshot.
    Simulate(SimulateArgs),
    /// Fit the size distribution of an events file.
    Stats(StatsArgs),
    /// Render an events file to WAV through a grain corpus.
    Sonify(SonifyArgs),
    /// Run a live session over WebSocket, or over stdin/stdout.
    Serve(ServeArgs),
    /// Re-run a session log and write its event stream.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DriveMode {
    /// Load until the most stressed block fails (spring-block); one grain per event (piles).
    Extremal,
    /// Advance the plate by `plate_rate` per event (spring-block only).
    Rate,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Key-value file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// sandpile, oslo or springblock
    #[arg(long)]
    pub model: Option<String>,
    /// Grid side, or pile length for oslo.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub threshold: Option<u32>,
    #[arg(long)]
    pub plate_rate: Option<f64>,
    #[arg(long)]
    pub events: Option<u64>,
    /// Events run and discarded before recording.
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub drive: Option<DriveMode>,
    #[arg(long)]
    pub out: PathBuf,
    /// Final state; defaults to `<out>.snapshot`.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub s_min: u64,
    #[arg(long, default_value_t = 5)]
    pub bins_per_decade: u32,
    #[arg(long)]
    pub report: PathBuf,
    /// Also write the histogram as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct SonifyArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Source recording; a synthetic crackle is used without one.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Mapping config (key-value).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub grain_ms: Option<f64>,
    #[arg(long)]
    pub hop_ms: Option<f64>,
    /// Also write the grain schedule as JSON lines.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Session config (key-value).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Write the session log here as it runs.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Speak the protocol on stdin/stdout instead of listening.
    #[arg(long)]
    pub stdio: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_ticks: Option<u64>,
}

#[derive(Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write every message, not only hello, config and events.
    #[arg(long)]
    pub all: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => batch::simulate(&a),
        Command::Stats(a) => batch::stats(&a),
        Command::Sonify(a) => batch::sonify(&a),
        Command::Serve(a) => serve::serve(&a),
        Command::Replay(a) => batch::replay(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("socsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
