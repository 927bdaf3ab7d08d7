mod anova;
mod balance;
mod estimate;
mod gps;
mod matching;
mod simulate;
mod trim;

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;

use crate::error::CliResult;
use crate::io::prepare_out_dir;
use crate::manifest::ManifestBuilder;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the multinomial assignment model and write the GPS of every unit.
    Gps(gps::GpsArgs),
    /// Drop units outside the rectangular common support and re-fit once.
    Trim(trim::TrimArgs),
    /// Build matched sets, subclasses or weights with one design.
    Match(matching::MatchArgs),
    /// Standardized pairwise biases of a design.
    Balance(balance::BalanceArgs),
    /// Treatment-effect estimates and rank tests on a design.
    Estimate(estimate::EstimateArgs),
    /// Run the factorial balance simulation described by a config file.
    Simulate(simulate::SimulateArgs),
    /// Rank simulation factors by mean square.
    Anova(anova::AnovaArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Master seed; every random choice is derived from it.
    #[arg(long)]
    pub seed: u64,
    /// Output directory, created when missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn run(command: Command, argv: &[String]) -> CliResult<()> {
    match command {
        Command::Gps(a) => gps::run(&a, argv),
        Command::Trim(a) => trim::run(&a, argv),
        Command::Match(a) => matching::run(&a, argv),
        Command::Balance(a) => balance::run(&a, argv),
        Command::Estimate(a) => estimate::run(&a, argv),
        Command::Simulate(a) => simulate::run(&a, argv),
        Command::Anova(a) => anova::run(&a, argv),
    }
}

/// An output directory being filled, with the manifest that will describe it.
pub struct Run {
    out: PathBuf,
    manifest: ManifestBuilder,
}

impl Run {
    pub fn start(command: &str, argv: &[String], args: &impl Serialize, common: &Common) -> CliResult<Self> {
        prepare_out_dir(&common.out)?;
        let config = serde_json::to_value(args)?;
        Ok(Self { out: common.out.clone(), manifest: ManifestBuilder::new(command, argv, config, common.seed) })
    }

    /// Records an input file and its digest.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.manifest.input(path)
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seed(name, value);
    }

    /// Path of a named output file inside the run directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.manifest.output(name);
        self.out.join(name)
    }

    pub fn finish(self) -> CliResult<()> {
        let path = self.manifest.write(&self.out)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}
