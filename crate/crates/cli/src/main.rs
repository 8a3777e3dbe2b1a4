use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use pararnn_cli::config::{
    load, AnalyzeConfig, ArmaCheckConfig, BenchConfig, Overrides, RunConfig, SimulateConfig, TrainRunConfig,
};
use pararnn_cli::{analyze, arma, bench_run, simulate, train_run, Outcome};

/// Block-diagonal recurrent networks and recurrence-feature analysis.
#[derive(Parser)]
#[command(name = "pararnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a tanh layer to data from a recurrent generating process and
    /// track the features of its recurrent matrix.
    Simulate(Common),
    /// Train on the adding problem or a CSV series.
    Train(Common),
    /// Report the recurrence features of a matrix file or checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Matrix text file or checkpoint; overrides `input` in the config.
        input: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Time the layer across block sizes, optionally sweep test MSE.
    Bench(Common),
    /// Compare the ARMA-to-RNN mapping with its closed-form oracles.
    ArmaCheck(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shrinks data sizes, for quick runs.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load<C: RunConfig>(&self) -> Result<C> {
        let o = Overrides {
            seed: self.seed,
            scale: self.scale,
            threads: self.threads,
        };
        let mut cfg: C = load(self.config.as_deref(), &o)?;
        if let Some(t) = *cfg.threads_mut() {
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
        }
        Ok(cfg)
    }
}

fn dispatch(cmd: Command) -> Result<(Outcome, PathBuf)> {
    let run = |out: &Path, r: Result<Outcome>| r.map(|o| (o, out.to_path_buf()));
    match cmd {
        Command::Simulate(c) => {
            let cfg: SimulateConfig = c.load()?;
            run(&c.out, simulate::run(&cfg, &c.out).map(|r| r.0))
        }
        Command::Train(c) => {
            let cfg: TrainRunConfig = c.load()?;
            run(&c.out, train_run::run(&cfg, &c.out).map(|r| r.0))
        }
        Command::Analyze { common, input, strict } => {
            let mut cfg: AnalyzeConfig = common.load()?;
            if input.is_some() {
                cfg.input = input;
            }
            if strict {
                cfg.mode = pararnn_cli::config::ClassifyMode::Strict;
            }
            run(&common.out, analyze::run(&cfg, &common.out).map(|r| r.0))
        }
        Command::Bench(c) => {
            let cfg: BenchConfig = c.load()?;
            run(&c.out, bench_run::run(&cfg, &c.out).map(|r| r.0))
        }
        Command::ArmaCheck(c) => {
            let cfg: ArmaCheckConfig = c.load()?;
            run(&c.out, arma::run(&cfg, &c.out).map(|r| r.0))
        }
    }
}

/// Joins the causes, skipping any already quoted by the message above it.
fn error_chain(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

/// Exit status 0 when every built-in check passes, 1 when one fails and 2
/// on errors.
fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok((outcome, out)) => {
            // A closed stdout (e.g. piped into `head`) is not an error.
            let mut stdout = std::io::stdout().lock();
            let _ = write!(stdout, "{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                let _ = writeln!(stdout);
            }
            let _ = writeln!(stdout, "artifacts in {}", out.display());
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(2)
        }
    }
}
