use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use vecmatch::designs::DesignTag;
use vecmatch::inference::{
    friedman_test, ipw_pate, outcome_matrix, quade_test, satt_estimates, TestResult, DEFAULT_EXACT_THRESHOLD,
};

use super::{Common, Run};
use crate::error::{CliError, CliResult};
use crate::io::{num, opt_num, read_cohort, read_weights, resolve_arm, write_json, DataArgs};

#[derive(Debug, Args, Serialize)]
#[group(id = "design_file", required = true, multiple = false)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Matched sets written by `match`; gives SATT and rank tests.
    #[arg(long, group = "design_file")]
    pub cohort: Option<PathBuf>,
    /// Unit weights written by `match --design ipw`; gives PATE contrasts.
    #[arg(long, group = "design_file")]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<String>,
    /// Exact permutation p-values up to this many matched sets.
    #[arg(long, default_value_t = DEFAULT_EXACT_THRESHOLD)]
    pub exact_threshold: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Serialize)]
struct Contrast {
    reference: String,
    comparator: String,
    estimate: f64,
}

#[derive(Serialize)]
struct Tests {
    friedman: Option<TestResult>,
    quade: Option<TestResult>,
    skipped: Vec<String>,
}

#[derive(Serialize)]
struct EstimateSummary {
    estimand: &'static str,
    n_trip: Option<usize>,
    contrasts: Vec<Contrast>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tests: Option<Tests>,
}

fn write_contrasts(path: &std::path::Path, contrasts: &[Contrast]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["reference", "comparator", "estimate"])?;
    for c in contrasts {
        w.write_record([c.reference.as_str(), &c.comparator, &num(c.estimate)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &EstimateArgs, argv: &[String]) -> CliResult<()> {
    let ds = args.data.load()?;
    if ds.outcome().is_none() {
        return Err(CliError::Usage(format!(
            "outcome column '{}' is missing from {}",
            args.data.outcome_col,
            args.data.data.display()
        )));
    }
    let mut run = Run::start("estimate", argv, args, &args.common)?;
    run.input(&args.data.data)?;
    let label = |a: usize| ds.arm_labels()[a].clone();

    let summary = if let Some(path) = &args.cohort {
        run.input(path)?;
        let cohort = read_cohort(path, &ds, DesignTag::Vm, args.reference.as_deref())?;
        let est = satt_estimates(&cohort, &ds)?;
        let contrasts: Vec<Contrast> = est
            .satt
            .iter()
            .map(|s| Contrast { reference: label(s.reference), comparator: label(s.comparator), estimate: s.estimate })
            .collect();
        write_contrasts(&run.output("satt.csv"), &contrasts)?;

        let m = outcome_matrix(&cohort, &ds)?;
        let mut skipped = Vec::new();
        // a degenerate matrix only costs the test, not the estimates
        let mut attempt =
            |name: &str, r: vecmatch::Result<TestResult>| r.map_err(|e| skipped.push(format!("{name}: {e}"))).ok();
        let friedman = attempt("friedman", friedman_test(&m, args.exact_threshold));
        let quade = attempt("quade", quade_test(&m, args.exact_threshold));
        for s in &skipped {
            log::warn!("rank test skipped, {s}");
        }
        let mut w = csv::Writer::from_path(run.output("tests.csv"))?;
        w.write_record(["test", "statistic", "df1", "df2", "p_asymptotic", "p_exact"])?;
        for (name, t) in [("friedman", &friedman), ("quade", &quade)] {
            if let Some(t) = t {
                w.write_record([
                    name.to_owned(),
                    num(t.statistic),
                    t.dof.to_string(),
                    t.dof_denominator.map(|d| d.to_string()).unwrap_or_default(),
                    num(t.p_value_asymptotic),
                    opt_num(t.p_value_exact),
                ])?;
            }
        }
        w.flush()?;
        EstimateSummary {
            estimand: "satt",
            n_trip: Some(cohort.n_trip()),
            contrasts,
            tests: Some(Tests { friedman, quade, skipped }),
        }
    } else {
        let path = args.weights.as_ref().expect("clap requires one design file");
        run.input(path)?;
        let weights = read_weights(path, &ds)?;
        let reference = resolve_arm(&ds, args.reference.as_deref())?;
        let contrasts = (0..ds.n_arms())
            .filter(|&t| t != reference)
            .map(|t| {
                Ok(Contrast {
                    reference: label(reference),
                    comparator: label(t),
                    estimate: ipw_pate(&ds, &weights, (reference, t))?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        write_contrasts(&run.output("pate.csv"), &contrasts)?;
        EstimateSummary { estimand: "pate", n_trip: None, contrasts, tests: None }
    };
    write_json(&run.output("estimate.json"), &summary)?;
    run.finish()
}
