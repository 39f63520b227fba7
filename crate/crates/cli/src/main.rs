use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use onsager::analysis::AnalysisReport;
use onsager_cli::commands;
use onsager_cli::error::Result;
use onsager_cli::{Checkpoint, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "onsagernet",
    version,
    about = "Learn and analyse OnsagerNet models of trajectory data"
)]
struct Cli {
    /// JSON run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training; results differ in the last bits from a
    /// single-threaded run.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path; a directory for `train`, stdout when omitted elsewhere.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured system into a dataset CSV and JSON sidecar.
    Generate,
    /// Train the configured model; writes checkpoint.json and history.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Fixed points, periodic orbits and Lyapunov estimates as JSON.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training dataset: checked against the checkpoint fingerprint and
        /// used for default Lyapunov starts and the energy comparison.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Integrate the learned model from an initial state; CSV output.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated initial state in model coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        h0: Vec<f64>,
        #[arg(long = "t-end")]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// Summarise a checkpoint (and optionally an analysis report) as JSON.
    ExportReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        analysis: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Numeric(format!("cannot serialise output: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.train.threads = threads;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Generate => {
            let out = out.ok_or_else(|| CliError::input("generate needs --out <file.csv>"))?;
            let fp = commands::generate(&cfg, out)?;
            eprintln!("wrote {} (sha256 {fp})", out.display());
        }
        Command::Train { data, quiet } => {
            let dir = out.ok_or_else(|| CliError::input("train needs --out <directory>"))?;
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let (checkpoint, report) = commands::train(&cfg, &data, quiet)?;
            checkpoint.save(&dir.join("checkpoint.json"))?;
            let history = dir.join("history.csv");
            std::fs::write(&history, report.to_csv()).map_err(|e| CliError::io(&history, e))?;
            let fmt = |x: Option<f64>| x.map_or_else(|| "-".into(), |v| format!("{v:.4e}"));
            eprintln!(
                "MSE train {}, test {}, {:.1} s",
                fmt(report.mse_train),
                fmt(report.mse_test),
                report.wall_time_secs
            );
        }
        Command::Analyze { checkpoint, data } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let report = commands::analyze(&cfg, &ck, data.as_deref())?;
            emit(out, &to_json(&report)?)?;
        }
        Command::Rollout {
            checkpoint,
            h0,
            t_end,
            dt,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            emit(out, &commands::rollout(&ck, &h0, t_end, dt)?)?;
        }
        Command::ExportReport { checkpoint, analysis } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let report = match analysis {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                    Some(serde_json::from_str::<AnalysisReport>(&text).map_err(|e| CliError::json(&path, e))?)
                }
                None => None,
            };
            emit(out, &to_json(&commands::export_report(&ck, report.as_ref()))?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
