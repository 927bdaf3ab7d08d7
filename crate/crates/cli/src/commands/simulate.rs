use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use vecmatch::sim::{run_sweep, SimConfig, SimResult, SweepOptions};

use super::{Common, Run};
use crate::config::SimulateConfig;
use crate::error::{CliError, CliResult};
use crate::io::{num, opt_num, write_json};

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// TOML file with [run], [grid] and optional [subsample] sections.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

/// Column names of the factors of a config, shared with `anova`.
pub const FACTOR_COLUMNS: [&str; 9] = ["z", "n_t1", "gamma", "dist", "bias", "tau", "sigma2_sq", "sigma3_sq", "p"];

fn factor_values(c: &SimConfig) -> [String; 9] {
    [
        c.z.to_string(),
        c.n_t1.to_string(),
        c.gamma.to_string(),
        c.dist.name().to_owned(),
        num(c.bias),
        num(c.tau),
        num(c.sigma2_sq),
        num(c.sigma3_sq),
        c.p.to_string(),
    ]
}

fn write_metrics(path: &std::path::Path, results: &[SimResult]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["key"];
    header.extend(FACTOR_COLUMNS);
    header.extend([
        "design",
        "mean_max2sb",
        "mean_pct_matched",
        "pre_max2sb",
        "mean_dropped_fraction",
        "n_ok",
        "n_failed",
    ]);
    w.write_record(&header)?;
    for r in results {
        for d in &r.designs {
            let mut rec = vec![r.config.key()];
            rec.extend(factor_values(&r.config));
            rec.extend([
                d.design.to_string(),
                num(d.mean_max2sb),
                opt_num(d.mean_pct_matched),
                num(r.pre_max2sb),
                num(r.mean_dropped_fraction),
                d.n_ok.to_string(),
                d.n_failed.to_string(),
            ]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_raw(path: &std::path::Path, results: &[SimResult]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "key",
        "rep",
        "seed",
        "design",
        "max2sb",
        "pct_matched",
        "pre_max2sb",
        "dropped_fraction",
        "error",
    ])?;
    for r in results {
        for rep in &r.reps {
            let common = [
                r.config.key(),
                rep.rep.to_string(),
                rep.seed.to_string(),
            ];
            if let Some(e) = &rep.error {
                w.write_record(common.iter().cloned().chain(
                    ["", "", "", "", "", e.as_str()].map(str::to_owned),
                ))?;
                continue;
            }
            for d in &rep.designs {
                let rec = common.iter().cloned().chain([
                    d.design.to_string(),
                    opt_num(d.mean_max2sb),
                    opt_num(d.pct_matched),
                    opt_num(rep.pre_max2sb),
                    opt_num(rep.dropped_fraction),
                    d.error.clone().unwrap_or_default(),
                ]);
                w.write_record(rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ManifestConfig<'a> {
    #[serde(flatten)]
    args: &'a SimulateArgs,
    resolved: &'a SimulateConfig,
}

#[derive(Serialize)]
struct Resolved<'a> {
    config_file: &'a SimulateConfig,
    n_configs: usize,
}

pub fn run(args: &SimulateArgs, argv: &[String]) -> CliResult<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.config.display())))?;
    let cfg = SimulateConfig::parse(&text)?;
    let configs = cfg.configs();
    let jobs = match args.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, usize::from),
    };
    let mut run = Run::start("simulate", argv, &ManifestConfig { args, resolved: &cfg }, &args.common)?;
    run.input(&args.config)?;

    let opts = SweepOptions {
        jobs,
        k: cfg.run.k,
        epsilon: cfg.run.epsilon,
        fit: vecmatch::gps::FitOptions { ridge: cfg.run.ridge, ..Default::default() },
        ..SweepOptions::new(cfg.run.reps, args.common.seed, cfg.run.designs.clone())
    };
    log::info!("{} configs x {} replications on {jobs} threads", configs.len(), opts.reps);
    let results = run_sweep(&configs, &opts)?;
    let failed: usize = results.iter().map(|r| r.n_failed).sum();
    if failed > 0 {
        log::warn!("{failed} replications failed before any design ran; see raw.csv");
    }
    write_metrics(&run.output("metrics.csv"), &results)?;
    write_raw(&run.output("raw.csv"), &results)?;
    write_json(&run.output("resolved_config.json"), &Resolved { config_file: &cfg, n_configs: configs.len() })?;
    run.finish()
}
