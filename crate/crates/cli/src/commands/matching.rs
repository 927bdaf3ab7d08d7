use clap::{Args, ValueEnum};
use serde::Serialize;
use vecmatch::balance::pct_matched;
use vecmatch::cluster::{KMeansOptions, StrataDiagnostics};
use vecmatch::data::{write_dataset, Dataset};
use vecmatch::designs::{
    crm_match, ipw_weights, kmc_subclassify, sbc_match, vector_match, BinaryOptions, DesignTag, PairRun, VmOptions,
    EXTREME_WEIGHT,
};
use vecmatch::gps::{fit_multinomial_logit, predict_gps, GpsMatrix};
use vecmatch::matcher::GreedyOrder;
use vecmatch::rng::derive_seed;
use vecmatch::support::trim_and_refit;

use super::gps::{write_gps, FitArgs};
use super::{Common, Run};
use crate::error::{CliError, CliResult};
use crate::io::{resolve_arm, write_cohort, write_json, write_subclasses, write_weights, DataArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignArg {
    Vm,
    Crm,
    Sbc,
    Kmc,
    Ipw,
}

impl From<DesignArg> for DesignTag {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Vm => DesignTag::Vm,
            DesignArg::Crm => DesignTag::Crm,
            DesignArg::Sbc => DesignTag::Sbc,
            DesignArg::Kmc => DesignTag::Kmc,
            DesignArg::Ipw => DesignTag::Ipw,
        }
    }
}

/// Order in which reference units pick partners in greedy matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderArg {
    Random,
    Descending,
    Ascending,
    Input,
}

#[derive(Debug, Args, Serialize)]
pub struct MatchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub design: DesignArg,
    /// Reference treatment label; the smallest arm when omitted.
    #[arg(long)]
    pub reference: Option<String>,
    /// Two labels `a,b` compared by sbc; `a` is the reference.
    #[arg(long)]
    pub pair: Option<String>,
    /// Number of k-means strata or subclasses.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Caliper width in standard deviations of the logit score.
    #[arg(long, default_value_t = vecmatch::matcher::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = OrderArg::Random)]
    pub order: OrderArg,
    /// Skip the common-support trim that vm, crm and ipw apply by default.
    #[arg(long)]
    pub no_trim: bool,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Serialize)]
struct PairSummary {
    pair: (String, String),
    caliper: f64,
    eligible: usize,
    matched: usize,
}

impl PairSummary {
    fn new(run: &PairRun, ds: &Dataset) -> Self {
        let label = |a: usize| ds.arm_labels()[a].clone();
        Self {
            pair: (label(run.pair.0), label(run.pair.1)),
            caliper: run.caliper,
            eligible: run.support.n_eligible(),
            matched: run.matches.len(),
        }
    }
}

#[derive(Serialize)]
struct StrataSummary {
    arm: String,
    caliper: f64,
    stratum_sizes: Vec<usize>,
    diagnostics: StrataDiagnostics,
    matched: usize,
}

#[derive(Default, Serialize)]
struct Diagnostics {
    design: String,
    reference: String,
    trimmed: bool,
    n_input: usize,
    n_analysis: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_trip: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pct_matched: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pairs: Vec<PairSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    strata: Vec<StrataSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subclass_counts: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deficient_subclasses: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extreme_weights: Option<usize>,
}

fn parse_pair(ds: &Dataset, pair: Option<&str>) -> CliResult<(usize, usize)> {
    let raw = pair.ok_or_else(|| CliError::Usage("--design sbc needs --pair a,b".into()))?;
    let (a, b) = raw
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("--pair expects two labels separated by a comma, got '{raw}'")))?;
    let (a, b) = (resolve_arm(ds, Some(a.trim()))?, resolve_arm(ds, Some(b.trim()))?);
    if a == b {
        return Err(CliError::Usage("--pair needs two different labels".into()));
    }
    Ok((a, b))
}

pub fn run(args: &MatchArgs, argv: &[String]) -> CliResult<()> {
    if args.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    if !(args.epsilon > 0.0) {
        return Err(CliError::Usage("--epsilon must be positive".into()));
    }
    let mut run = Run::start("match", argv, args, &args.common)?;
    run.input(&args.data.data)?;
    let raw = args.data.load()?;
    let design = DesignTag::from(args.design);
    let fit = args.fit.options();
    let seed = args.common.seed;

    let pair = match design {
        DesignTag::Sbc => Some(parse_pair(&raw, args.pair.as_deref())?),
        _ => None,
    };
    let reference = match pair {
        Some((a, _)) => a,
        None => resolve_arm(&raw, args.reference.as_deref())?,
    };
    let trim = !args.no_trim && matches!(design, DesignTag::Vm | DesignTag::Crm | DesignTag::Ipw);
    let (ds, gps): (Dataset, Option<GpsMatrix>) = if trim {
        let t = trim_and_refit(&raw, &fit)?;
        (t.data, Some(t.gps))
    } else if matches!(design, DesignTag::Sbc | DesignTag::Crm) {
        (raw.clone(), None)
    } else {
        let model = fit_multinomial_logit(&raw, &fit)?;
        let gps = predict_gps(&model, &raw)?;
        (raw.clone(), Some(gps))
    };

    let mut diag = Diagnostics {
        design: design.to_string(),
        reference: raw.arm_labels()[reference].clone(),
        trimmed: trim,
        n_input: raw.n_units(),
        n_analysis: ds.n_units(),
        ..Default::default()
    };
    write_dataset(&ds, run.output("data.csv"))?;
    if let Some(g) = &gps {
        write_gps(&run.output("gps.csv"), g, &ds)?;
    }
    let order = match args.order {
        OrderArg::Random => {
            let s = derive_seed(seed, &[3]);
            run.seed("greedy_order", s);
            GreedyOrder::Random { seed: s }
        }
        OrderArg::Descending => GreedyOrder::DescendingScore,
        OrderArg::Ascending => GreedyOrder::AscendingScore,
        OrderArg::Input => GreedyOrder::InputOrder,
    };
    let binary = BinaryOptions { epsilon: args.epsilon, fit, order };
    let eligible_reference = ds.units_in_arm(reference).len();

    match design {
        DesignTag::Vm => {
            let s = derive_seed(seed, &[1]);
            run.seed("kmeans", s);
            let opts = VmOptions { k: args.k, epsilon: args.epsilon, ..VmOptions::new(s) };
            let vm = vector_match(&ds, gps.as_ref().expect("vm has a GPS"), reference, &opts)?;
            write_cohort(&run.output("cohort.csv"), &vm.cohort, &ds)?;
            diag.n_trip = Some(vm.cohort.n_trip());
            diag.pct_matched = Some(pct_matched(&vm.cohort, eligible_reference));
            diag.strata = vm
                .runs
                .iter()
                .map(|r| StrataSummary {
                    arm: ds.arm_labels()[r.arm].clone(),
                    caliper: r.caliper,
                    stratum_sizes: r.stratum_sizes.clone(),
                    diagnostics: r.strata,
                    matched: r.matched,
                })
                .collect();
        }
        DesignTag::Crm => {
            let crm = crm_match(&ds, reference, &binary)?;
            write_cohort(&run.output("cohort.csv"), &crm.cohort, &ds)?;
            diag.n_trip = Some(crm.cohort.n_trip());
            diag.pct_matched = Some(pct_matched(&crm.cohort, eligible_reference));
            diag.pairs = crm.pairs.iter().map(|p| PairSummary::new(p, &ds)).collect();
        }
        DesignTag::Sbc => {
            let sbc = sbc_match(&ds, pair.expect("sbc has a pair"), &binary)?;
            write_cohort(&run.output("cohort.csv"), &sbc.cohort, &ds)?;
            diag.n_trip = Some(sbc.cohort.n_trip());
            diag.pct_matched = Some(pct_matched(&sbc.cohort, eligible_reference));
            diag.pairs = vec![PairSummary::new(&sbc.run, &ds)];
        }
        DesignTag::Kmc => {
            let s = derive_seed(seed, &[2]);
            run.seed("kmeans", s);
            let sub =
                kmc_subclassify(&ds, gps.as_ref().expect("kmc has a GPS"), args.k, s, &KMeansOptions::default())?;
            write_subclasses(&run.output("subclasses.csv"), &sub, &ds)?;
            diag.deficient_subclasses = Some(sub.deficient.len());
            diag.subclass_counts = Some(sub.counts);
        }
        DesignTag::Ipw => {
            let w = ipw_weights(&ds, gps.as_ref().expect("ipw has a GPS"))?;
            write_weights(&run.output("weights.csv"), &w, &ds)?;
            diag.max_weight = Some(w.weights.iter().copied().fold(0.0, f64::max));
            diag.extreme_weights = Some(w.weights.iter().filter(|&&v| v > EXTREME_WEIGHT).count());
        }
    }
    write_json(&run.output("diagnostics.json"), &diag)?;
    run.finish()
}
