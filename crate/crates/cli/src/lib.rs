//! Library side of the `pararnn` command-line tool. Each subcommand is a
//! module with a `run(config, out_dir)` entry point that writes its
//! artifacts and returns an [`Outcome`].

pub mod analyze;
pub mod arma;
pub mod bench_run;
pub mod config;
pub mod simulate;
pub mod train_run;

/// What a subcommand reports back to the caller.
#[derive(Clone, Debug)]
pub struct Outcome {
    /// False when a check built into the command failed.
    pub passed: bool,
    pub summary: String,
}
