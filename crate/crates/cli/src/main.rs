use std::path::PathBuf;
use std::process::ExitCode;

use aadladmm::commands::{cmd_compare, cmd_sweep, cmd_train, Grid, Optimizer};
use aadladmm::config::{parse_list, RunConfig};
use aadladmm::{verify, CliError, Result};
use clap::{Args, Parser, Subcommand};

/// Gradient-free neural network training by accelerated alternating minimization.
#[derive(Parser)]
#[command(name = "aadladmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its metrics and summary.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        rho: Option<String>,
        #[arg(long)]
        m: Option<String>,
    },
    /// Train several optimizers from the same initialization.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        rho: Option<String>,
        #[arg(long)]
        m: Option<String>,
        /// Comma-separated subset of aa, plain, gd, adam.
        #[arg(long, default_value = "aa,plain,gd,adam")]
        optimizers: String,
    },
    /// Train over a grid of rho or m values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated rho values.
        #[arg(long, conflicts_with = "m", required_unless_present = "m")]
        rho: Option<String>,
        /// Comma-separated memory depths.
        #[arg(long)]
        m: Option<String>,
    },
    /// Run the invariant checks.
    Verify {
        /// Corrupt one check on purpose to exercise the failure path.
        #[arg(long)]
        inject_fault: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synth` or a CSV path.
    #[arg(long)]
    data: Option<String>,
    /// Whether the CSV has a header row (on|off).
    #[arg(long)]
    header: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Anderson acceleration (on|off).
    #[arg(long)]
    aa: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory; defaults to $AA_DLADMM_OUT_DIR, then `runs`.
    #[arg(long)]
    out: Option<String>,
    /// Record wall-clock time per epoch (on|off).
    #[arg(long)]
    timing: Option<String>,
    /// Metrics format (csv|jsonl).
    #[arg(long)]
    format: Option<String>,
    /// Any other configuration key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self, extra: &[(&str, &Option<String>)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        let flags = [
            ("data", &self.data),
            ("header", &self.header),
            ("epochs", &self.epochs),
            ("aa", &self.aa),
            ("seed", &self.seed),
            ("out", &self.out),
            ("timing", &self.timing),
            ("format", &self.format),
        ];
        for (k, v) in flags.iter().chain(extra) {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, rho, m } => {
            let cfg = run.resolve(&[("rho", &rho), ("m", &m)])?;
            let dir = cmd_train(&cfg)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Compare { run, rho, m, optimizers } => {
            let cfg = run.resolve(&[("rho", &rho), ("m", &m)])?;
            let kinds = optimizers
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(Optimizer::parse)
                .collect::<Result<Vec<_>>>()?;
            let dir = cmd_compare(&cfg, &kinds)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Sweep { run, rho, m } => {
            let cfg = run.resolve(&[])?;
            let grid = match (rho, m) {
                (Some(r), _) => Grid::Rho(parse_list("rho", &r)?),
                (None, Some(m)) => Grid::M(parse_list("m", &m)?),
                (None, None) => unreachable!("clap requires one grid"),
            };
            let dir = cmd_sweep(&cfg, &grid)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Verify { inject_fault } => {
            let failures = verify::run(inject_fault);
            if failures > 0 {
                return Err(CliError::VerifyFailed(failures));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
