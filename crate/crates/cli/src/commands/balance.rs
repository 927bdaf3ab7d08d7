use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use vecmatch::balance::{balance_report, pct_matched, reference_sd, Weighting, BINARY_SB_CUTOFF, MULTI_SB_CUTOFF};
use vecmatch::designs::DesignTag;

use super::{Common, Run};
use crate::error::{CliError, CliResult};
use crate::io::{num, opt_num, read_cohort, read_subclasses, read_weights, resolve_arm, write_json, DataArgs};

#[derive(Debug, Args, Serialize)]
#[group(id = "design_file", multiple = false)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Matched sets written by `match`.
    #[arg(long, group = "design_file")]
    pub cohort: Option<PathBuf>,
    /// Unit weights written by `match --design ipw`.
    #[arg(long, group = "design_file")]
    pub weights: Option<PathBuf>,
    /// Subclasses written by `match --design kmc`.
    #[arg(long, group = "design_file")]
    pub subclasses: Option<PathBuf>,
    /// Reference label; defaults to the cohort's first arm or the smallest arm.
    #[arg(long)]
    pub reference: Option<String>,
    /// Full sample whose reference-arm standard deviations scale the biases;
    /// defaults to `--data`.
    #[arg(long)]
    pub sd_data: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Serialize)]
struct BalanceSummary {
    design: String,
    reference: String,
    arms: Vec<String>,
    mean_max2sb: f64,
    pct_matched: Option<f64>,
    n_trip: Option<usize>,
    exceeding_binary_cutoff: Vec<String>,
    exceeding_multi_cutoff: Vec<String>,
}

pub fn run(args: &BalanceArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("balance", argv, args, &args.common)?;
    run.input(&args.data.data)?;
    let ds = args.data.load()?;
    let sd_ds = match &args.sd_data {
        Some(path) => {
            run.input(path)?;
            let mut schema_args = args.data.clone();
            schema_args.data = path.clone();
            schema_args.load()?
        }
        None => ds.clone(),
    };
    if sd_ds.covariate_names() != ds.covariate_names() {
        return Err(CliError::Usage("--sd-data must have the same covariate columns as --data".into()));
    }

    let cohort = match &args.cohort {
        Some(path) => {
            run.input(path)?;
            Some(read_cohort(path, &ds, DesignTag::Vm, args.reference.as_deref())?)
        }
        None => None,
    };
    let weights = match &args.weights {
        Some(path) => {
            run.input(path)?;
            Some(read_weights(path, &ds)?)
        }
        None => None,
    };
    let subclasses = match &args.subclasses {
        Some(path) => {
            run.input(path)?;
            Some(read_subclasses(path, &ds)?)
        }
        None => None,
    };
    let reference = match &cohort {
        Some(c) => c.reference,
        None => resolve_arm(&ds, args.reference.as_deref())?,
    };
    let (weighting, design, arms) = match (&cohort, &weights, &subclasses) {
        (Some(c), _, _) => (Weighting::Matched(c), "matched", c.arms.clone()),
        (_, Some(w), _) => (Weighting::Ipw(w), "weighted", (0..ds.n_arms()).collect()),
        (_, _, Some(s)) => (Weighting::Subclass(s), "subclassified", (0..ds.n_arms()).collect()),
        _ => (Weighting::Unweighted, "unadjusted", (0..ds.n_arms()).collect()),
    };

    let ref_label = &ds.arm_labels()[reference];
    let sd_reference = sd_ds.arm_index(ref_label).ok_or_else(|| {
        CliError::Usage(format!("reference '{ref_label}' does not occur in the standard-deviation sample"))
    })?;
    let delta = reference_sd(&sd_ds, sd_reference)?;
    let pct = cohort.as_ref().map(|c| pct_matched(c, ds.units_in_arm(reference).len()));
    let report = balance_report(&ds, &arms, weighting, &delta, pct)?;
    let label = |a: usize| ds.arm_labels()[a].clone();
    let names = ds.covariate_names();

    let mut w = csv::Writer::from_path(run.output("balance.csv"))?;
    let mut header = vec!["covariate".to_owned()];
    header.extend(report.pairs.iter().map(|&(a, b)| format!("sb_{}_{}", label(a), label(b))));
    header.extend(
        ["max2sb", "avg_abs_sb", "delta", "exceeds_0.25", "exceeds_0.20"].map(str::to_owned),
    );
    w.write_record(&header)?;
    for (p, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(report.sb[p].iter().map(|&v| num(v)));
        rec.push(num(report.max2sb[p]));
        rec.push(num(report.avg_abs_sb[p]));
        rec.push(num(delta[p]));
        rec.push(u8::from(report.max2sb[p] > BINARY_SB_CUTOFF).to_string());
        rec.push(u8::from(report.max2sb[p] > MULTI_SB_CUTOFF).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(run.output("means.csv"))?;
    let mut header = vec!["covariate".to_owned()];
    header.extend(arms.iter().map(|&a| format!("mean_{}", label(a))));
    w.write_record(&header)?;
    for (p, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(report.weighted_means.iter().map(|m| num(m[p])));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let summary = BalanceSummary {
        design: design.into(),
        reference: label(reference),
        arms: arms.iter().map(|&a| label(a)).collect(),
        mean_max2sb: report.mean_max2sb,
        pct_matched: report.pct_matched,
        n_trip: cohort.as_ref().map(|c| c.n_trip()),
        exceeding_binary_cutoff: report.exceeding(BINARY_SB_CUTOFF).into_iter().map(|p| names[p].clone()).collect(),
        exceeding_multi_cutoff: report.exceeding(MULTI_SB_CUTOFF).into_iter().map(|p| names[p].clone()).collect(),
    };
    log::info!("mean Max2SB {} (pct matched {})", summary.mean_max2sb, opt_num(summary.pct_matched));
    write_json(&run.output("balance.json"), &summary)?;
    run.finish()
}
