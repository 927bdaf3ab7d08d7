use clap::Args;
use serde::Serialize;
use vecmatch::data::write_dataset;
use vecmatch::support::trim_and_refit;

use super::gps::{FitArgs, ModelReport};
use super::{Common, Run};
use crate::error::CliResult;
use crate::io::{num, write_json, DataArgs};

#[derive(Debug, Args, Serialize)]
pub struct TrimArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Serialize)]
struct ArmCounts<'a> {
    arm: &'a str,
    before: usize,
    after: usize,
}

#[derive(Serialize)]
struct TrimSummary<'a> {
    n_units: usize,
    n_kept: usize,
    n_dropped: usize,
    dropped_fraction: f64,
    arms: Vec<ArmCounts<'a>>,
    first_model: ModelReport<'a>,
    refit_model: ModelReport<'a>,
}

pub fn run(args: &TrimArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("trim", argv, args, &args.common)?;
    run.input(&args.data.data)?;
    let ds = args.data.load()?;
    let trimmed = trim_and_refit(&ds, &args.fit.options())?;
    let support = &trimmed.first_support;

    let mut w = csv::Writer::from_path(run.output("eligibility.csv"))?;
    w.write_record(["id", "treatment", "eligible"])?;
    for (i, &e) in support.eligible.iter().enumerate() {
        w.write_record([ds.unit_ids()[i].as_str(), &ds.arm_labels()[ds.arm(i)], if e { "1" } else { "0" }])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(run.output("bounds.csv"))?;
    w.write_record(["component", "low", "high"])?;
    for (t, label) in ds.arm_labels().iter().enumerate() {
        w.write_record([format!("p_{label}"), num(support.low[t]), num(support.high[t])])?;
    }
    w.flush()?;

    write_dataset(&trimmed.data, run.output("trimmed.csv"))?;
    let after = trimmed.data.arm_counts();
    let summary = TrimSummary {
        n_units: ds.n_units(),
        n_kept: trimmed.kept.len(),
        n_dropped: trimmed.n_dropped(),
        dropped_fraction: trimmed.dropped_fraction(),
        arms: ds
            .arm_labels()
            .iter()
            .zip(ds.arm_counts())
            .zip(after)
            .map(|((l, before), after)| ArmCounts { arm: l, before, after })
            .collect(),
        first_model: ModelReport::new(&trimmed.first_model, &ds),
        refit_model: ModelReport::new(&trimmed.model, &ds),
    };
    write_json(&run.output("trim.json"), &summary)?;
    run.finish()
}
