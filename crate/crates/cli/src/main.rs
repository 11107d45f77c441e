mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum ErrorKind {
    Validation,
    Data,
    Verification,
}

/// A failure reported as one line on stderr with a matching exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: m.into(),
        }
    }

    pub fn data(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: m.into(),
        }
    }

    pub fn verification(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Verification,
            message: m.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Validation => 2,
            ErrorKind::Data => 3,
            ErrorKind::Verification => 4,
        }
    }

    fn line(&self) -> String {
        let kind = match self.kind {
            ErrorKind::Validation => "validation",
            ErrorKind::Data => "data",
            ErrorKind::Verification => "verification",
        };
        format!("error: {kind}: {}", self.message.replace('\n', " "))
    }
}

#[derive(Parser, Debug)]
#[command(name = "zonetrust", version, about = "Zoned IoT ledger and behavior monitor simulator")]
struct Cli {
    /// TOML file with defaults; see config/default.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic benign and attack feature CSVs.
    Gen(GenArgs),
    /// Fit the autoencoder and its threshold on benign rows.
    Train(TrainArgs),
    /// Score a labeled CSV and emit per-detector reports.
    Detect(DetectArgs),
    /// Run a scripted multi-zone scenario.
    Simulate(SimulateArgs),
    /// Check an exported ledger file.
    VerifyLedger(VerifyArgs),
    /// Print a saved detection report.
    Report(ReportArgs),
    /// Fuse altitude readings with innovation gating.
    Fuse(FuseArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub benign: usize,
    /// Attack name and row count; repeatable.
    #[arg(long, num_args = 2, value_names = ["NAME", "COUNT"], action = clap::ArgAction::Append)]
    pub attack: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training report path; defaults next to the model.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long = "lr-n")]
    pub lr_n: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Labeled CSVs, concatenated in order.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Also run Isolation Forest and LOF.
    #[arg(long)]
    pub baselines: bool,
    /// Benign CSV the baselines are fitted and calibrated on.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario script; without it the configured topology runs benign.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Saved model; without it one is trained on generated benign rows.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub blocksize: Option<usize>,
    #[arg(long = "W")]
    pub window: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub path: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "table", value_parser = ["table", "csv", "dat", "json"])]
    pub format: String,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// CSV of tick,sensor_id,value. Mutually exclusive with --demo.
    #[arg(long, conflicts_with = "demo")]
    pub input: Option<PathBuf>,
    /// Generate a three-sensor altitude run instead of reading one.
    #[arg(long)]
    pub demo: bool,
    /// Per-tick drift on the named sensor for --demo, e.g. baro=0.5.
    #[arg(long)]
    pub drift: Option<String>,
    #[arg(long = "gate-p")]
    pub gate_p: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Train(a) => {
            if a.lr_n.is_some() {
                cfg.train.lr_n = a.lr_n;
            }
            cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
            cfg.train.patience = a.patience.unwrap_or(cfg.train.patience);
        }
        Command::Simulate(a) => {
            cfg.zone.blocksize = a.blocksize.unwrap_or(cfg.zone.blocksize);
            cfg.zone.window = a.window.unwrap_or(cfg.zone.window);
            cfg.zone.tau = a.tau.unwrap_or(cfg.zone.tau);
        }
        Command::Fuse(a) => cfg.fusion.gate_p = a.gate_p.unwrap_or(cfg.fusion.gate_p),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen(a) => commands::gen(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Detect(a) => commands::detect(&cfg, a),
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::VerifyLedger(a) => commands::verify_ledger(a),
        Command::Report(a) => commands::report(a),
        Command::Fuse(a) => commands::fuse(&cfg, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}
