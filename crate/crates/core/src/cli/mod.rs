//! Command-line surface of the `mixdiff` binary.
//!
//! Exit codes: 0 success, 1 a quantitative check failed, 2 usage, config or
//! input error.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::sampler::Mode;

pub use commands::{error_exit_code, Outcome};
pub use config::{Manifest, Overrides, PriorKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "mixdiff", version, about = "Diffusion-based source separation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo check of the closed-form marginals.
    Verify(Flags),
    /// Separate toy mixtures with an oracle score or a trained checkpoint.
    SeparateToy(Flags),
    /// Train the toy score model.
    TrainToy(Flags),
    /// Separate a mono WAV file with a checkpoint.
    SeparateWav(Flags),
    /// Split a mono WAV file into speech and noise with a checkpoint.
    EnhanceWav(Flags),
    /// Simulate the forward process from toy sources.
    SimulateForward(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sep,
    Enh,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sep => Mode::Separation,
            ModeArg::Enh => Mode::Enhancement,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// TOML configuration file; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of sources.
    #[arg(long)]
    pub k: Option<usize>,
    /// Samples per source block.
    #[arg(long)]
    pub n: Option<usize>,
    /// Predictor steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Corrector steps per predictor step.
    #[arg(long)]
    pub corrector: Option<usize>,
    /// Corrector signal-to-noise parameter.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Probability of the mismatch loss during training.
    #[arg(long)]
    pub pt: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub priorgrad: Option<Switch>,
    /// Record the sampler trajectory.
    #[arg(long, value_enum)]
    pub trajectory: Option<Switch>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Number of toy separation trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Toy prior: gaussian, gmm or point-mass.
    #[arg(long)]
    pub prior: Option<PriorKind>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Input WAV file.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
}

impl Flags {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            k: self.k,
            n: self.n,
            steps: self.steps,
            corrector: self.corrector,
            snr: self.snr,
            pt: self.pt,
            mode: self.mode.map(Mode::from),
            priorgrad: self.priorgrad.map(bool::from),
            trajectory: self.trajectory.map(bool::from),
            workers: self.workers,
            trials: self.trials,
            prior: self.prior,
            checkpoint: self.checkpoint.clone(),
            input: self.input.clone(),
        }
    }

    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self) -> crate::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.overrides());
        cfg.resolve()
    }
}

/// Runs a parsed command line, printing results, and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let (flags, name) = match &cli.command {
        Command::Verify(f) => (f, "verify"),
        Command::SeparateToy(f) => (f, "separate-toy"),
        Command::TrainToy(f) => (f, "train-toy"),
        Command::SeparateWav(f) => (f, "separate-wav"),
        Command::EnhanceWav(f) => (f, "enhance-wav"),
        Command::SimulateForward(f) => (f, "simulate-forward"),
    };
    let result = flags.resolve().and_then(|cfg| match &cli.command {
        Command::Verify(_) => commands::verify(&cfg),
        Command::SeparateToy(_) => commands::separate_toy(&cfg),
        Command::TrainToy(_) => commands::train_toy(&cfg),
        Command::SeparateWav(_) => commands::separate_wav(&cfg, cfg.sampler.mode),
        Command::EnhanceWav(_) => commands::separate_wav(&cfg, Mode::Enhancement),
        Command::SimulateForward(_) => commands::simulate_forward(&cfg),
    });
    match result {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if !outcome.passed {
                eprintln!("{name}: checks failed, see {}", outcome.out_dir.join("report.json").display());
            }
            outcome.exit_code()
        }
        Err(err) => {
            eprintln!("{name}: error: {err}");
            error_exit_code(&err)
        }
    }
}
