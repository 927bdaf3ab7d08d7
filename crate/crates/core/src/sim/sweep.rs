//! Factorial sweep: replications per config, each generating a dataset,
//! trimming it, running the requested designs and recording balance.
//!
//! Every replication is seeded from the config key, its index and the master
//! seed, and results are collected in a fixed order, so the output does not
//! depend on the number of worker threads.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{balance_report, pct_matched, reference_sd, Weighting};
use crate::cluster::KMeansOptions;
use crate::data::{summarize, Dataset};
use crate::designs::{crm_match, ipw_weights, kmc_subclassify, vector_match, BinaryOptions, DesignTag, VmOptions};
use crate::gps::{predict_gps, FitOptions};
use crate::matcher::{GreedyOrder, DEFAULT_EPSILON};
use crate::rng::{derive_seed, key_hash, prng};
use crate::sim::dgp::{generate, Dist, SimConfig};
use crate::support::trim_and_refit;
use crate::{Error, Result};

pub const Z3_N: [usize; 2] = [500, 1000];
pub const GAMMAS: [usize; 2] = [1, 2];
pub const DISTS: [Dist; 2] = [Dist::T7, Dist::Normal];
pub const BIASES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const TAUS: [f64; 2] = [0.0, 0.25];
pub const VARIANCES: [f64; 3] = [0.5, 1.0, 2.0];
pub const PS: [usize; 2] = [3, 6];

/// The full three-arm grid; with `exclude_small_p6` the `(P = 6, n = 500)`
/// cells are left out.
pub fn z3_grid(exclude_small_p6: bool) -> Vec<SimConfig> {
    let mut out = Vec::new();
    for n in Z3_N {
        for gamma in GAMMAS {
            for dist in DISTS {
                for bias in BIASES {
                    for tau in TAUS {
                        for s2 in VARIANCES {
                            for s3 in VARIANCES {
                                for p in PS {
                                    if exclude_small_p6 && p == 6 && n == 500 {
                                        continue;
                                    }
                                    out.push(SimConfig::z3(n, gamma, dist, bias, tau, s2, s3, p));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// The twenty five-arm configurations.
pub fn z5_grid() -> Vec<SimConfig> {
    let mut out = Vec::new();
    for gamma in GAMMAS {
        for dist in DISTS {
            for b in BIASES {
                out.push(SimConfig::z5(1000, gamma, dist, b));
            }
        }
    }
    out
}

/// Draws up to `per_stratum` configs from every `(bias, distribution)`
/// stratum with a seeded shuffle, keeping the grid order in the result.
pub fn stratified_subsample(configs: &[SimConfig], per_stratum: usize, seed: u64) -> Vec<SimConfig> {
    let mut strata: BTreeMap<(u64, &'static str), Vec<usize>> = BTreeMap::new();
    for (i, cfg) in configs.iter().enumerate() {
        strata.entry((cfg.bias.to_bits(), cfg.dist.name())).or_default().push(i);
    }
    let mut picked: Vec<usize> = Vec::new();
    for (s, members) in strata.values_mut().enumerate() {
        members.shuffle(&mut prng(derive_seed(seed, &[s as u64])));
        picked.extend(members.iter().take(per_stratum));
    }
    picked.sort_unstable();
    picked.into_iter().map(|i| configs[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub reps: usize,
    pub seed: u64,
    pub jobs: usize,
    pub designs: Vec<DesignTag>,
    pub k: usize,
    pub epsilon: f64,
    pub fit: FitOptions,
}

impl SweepOptions {
    pub fn new(reps: usize, seed: u64, designs: Vec<DesignTag>) -> Self {
        Self { reps, seed, jobs: 1, designs, k: 5, epsilon: DEFAULT_EPSILON, fit: FitOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMetric {
    pub design: DesignTag,
    pub mean_max2sb: Option<f64>,
    pub pct_matched: Option<f64>,
    pub error: Option<String>,
}

/// Metrics of one replication. `error` is set when the replication failed
/// before any design ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub rep: usize,
    pub seed: u64,
    pub dropped_fraction: Option<f64>,
    pub eligible_reference: Option<usize>,
    pub pre_max2sb: Option<f64>,
    pub designs: Vec<DesignMetric>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub design: DesignTag,
    pub mean_max2sb: f64,
    pub mean_pct_matched: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub pre_max2sb: f64,
    pub mean_dropped_fraction: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub designs: Vec<DesignSummary>,
    pub reps: Vec<RepMetrics>,
}

impl SimResult {
    pub fn design(&self, tag: DesignTag) -> Option<&DesignSummary> {
        self.designs.iter().find(|d| d.design == tag)
    }
}

/// Seed of replication `rep` of `cfg`.
pub fn rep_seed(master: u64, cfg: &SimConfig, rep: usize) -> u64 {
    derive_seed(master, &[key_hash(&cfg.key()), rep as u64])
}

fn run_design(
    tag: DesignTag,
    raw: &Dataset,
    trimmed: &crate::support::Trimmed,
    reference: usize,
    delta: &[f64],
    seed: u64,
    opts: &SweepOptions,
) -> Result<(f64, Option<f64>)> {
    let ds = &trimmed.data;
    let arms: Vec<usize> = (0..ds.n_arms()).collect();
    let eligible = ds.units_in_arm(reference).len();
    let km = KMeansOptions::default();
    match tag {
        DesignTag::Vm => {
            let vm_opts = VmOptions { k: opts.k, epsilon: opts.epsilon, ..VmOptions::new(derive_seed(seed, &[1])) };
            let vm = vector_match(ds, &trimmed.gps, reference, &vm_opts)?;
            let r = balance_report(ds, &arms, Weighting::Matched(&vm.cohort), delta, None)?;
            Ok((r.mean_max2sb, Some(pct_matched(&vm.cohort, eligible))))
        }
        DesignTag::Crm => {
            let bin = BinaryOptions {
                epsilon: opts.epsilon,
                fit: opts.fit,
                order: GreedyOrder::Random { seed: derive_seed(seed, &[3]) },
            };
            let crm = crm_match(ds, reference, &bin)?;
            let r = balance_report(ds, &arms, Weighting::Matched(&crm.cohort), delta, None)?;
            Ok((r.mean_max2sb, Some(pct_matched(&crm.cohort, eligible))))
        }
        DesignTag::Ipw => {
            let w = ipw_weights(ds, &trimmed.gps)?;
            Ok((balance_report(ds, &arms, Weighting::Ipw(&w), delta, None)?.mean_max2sb, None))
        }
        DesignTag::Kmc => {
            // Subclassification alone has no support rule, so every unit is
            // clustered on the GPS of the first fit.
            let gps = predict_gps(&trimmed.first_model, raw)?;
            let sub = kmc_subclassify(raw, &gps, opts.k, derive_seed(seed, &[2]), &km)?;
            Ok((balance_report(raw, &arms, Weighting::Subclass(&sub), delta, None)?.mean_max2sb, None))
        }
        DesignTag::Sbc => Err(Error::Validation("pairwise comparisons are not part of the sweep".into())),
    }
}

/// One replication of one config.
pub fn run_replication(cfg: &SimConfig, rep: usize, opts: &SweepOptions) -> RepMetrics {
    let seed = rep_seed(opts.seed, cfg, rep);
    let mut out = RepMetrics {
        rep,
        seed,
        dropped_fraction: None,
        eligible_reference: None,
        pre_max2sb: None,
        designs: Vec::new(),
        error: None,
    };
    let prepared = (|| {
        let ds = generate(cfg, seed)?;
        let reference = summarize(&ds).reference;
        let delta = reference_sd(&ds, reference)?;
        let trimmed = trim_and_refit(&ds, &opts.fit)?;
        let arms: Vec<usize> = (0..ds.n_arms()).collect();
        let pre = balance_report(&trimmed.data, &arms, Weighting::Unweighted, &delta, None)?.mean_max2sb;
        Ok::<_, Error>((ds, reference, delta, trimmed, pre))
    })();
    let (ds, reference, delta, trimmed, pre) = match prepared {
        Ok(v) => v,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.dropped_fraction = Some(trimmed.dropped_fraction());
    out.eligible_reference = Some(trimmed.data.units_in_arm(reference).len());
    out.pre_max2sb = Some(pre);
    for &tag in &opts.designs {
        let metric = match run_design(tag, &ds, &trimmed, reference, &delta, seed, opts) {
            Ok((m, pct)) => DesignMetric { design: tag, mean_max2sb: Some(m), pct_matched: pct, error: None },
            Err(e) => DesignMetric { design: tag, mean_max2sb: None, pct_matched: None, error: Some(e.to_string()) },
        };
        out.designs.push(metric);
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates replications of one config in replication order.
pub fn summarize_reps(config: SimConfig, designs: &[DesignTag], reps: Vec<RepMetrics>) -> SimResult {
    let ok: Vec<&RepMetrics> = reps.iter().filter(|r| r.error.is_none()).collect();
    let summaries = designs
        .iter()
        .map(|&tag| {
            let metrics: Vec<&DesignMetric> =
                ok.iter().filter_map(|r| r.designs.iter().find(|d| d.design == tag)).collect();
            let good: Vec<&&DesignMetric> = metrics.iter().filter(|d| d.error.is_none()).collect();
            DesignSummary {
                design: tag,
                mean_max2sb: mean(good.iter().filter_map(|d| d.mean_max2sb)).unwrap_or(f64::NAN),
                mean_pct_matched: mean(good.iter().filter_map(|d| d.pct_matched)),
                n_ok: good.len(),
                n_failed: reps.len() - good.len(),
            }
        })
        .collect();
    SimResult {
        config,
        pre_max2sb: mean(ok.iter().filter_map(|r| r.pre_max2sb)).unwrap_or(f64::NAN),
        mean_dropped_fraction: mean(ok.iter().filter_map(|r| r.dropped_fraction)).unwrap_or(f64::NAN),
        n_ok: ok.len(),
        n_failed: reps.len() - ok.len(),
        designs: summaries,
        reps,
    }
}

/// Runs every config for `opts.reps` replications on `opts.jobs` threads.
pub fn run_sweep(configs: &[SimConfig], opts: &SweepOptions) -> Result<Vec<SimResult>> {
    for cfg in configs {
        cfg.validate()?;
        if cfg.z != 3 && opts.designs.iter().any(|d| matches!(d, DesignTag::Crm)) {
            return Err(Error::Validation("common referent matching needs three arms".into()));
        }
    }
    if opts.designs.contains(&DesignTag::Sbc) {
        return Err(Error::Validation("pairwise comparisons are not part of the sweep".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    let tasks: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..opts.reps).map(move |r| (c, r))).collect();
    let mut metrics: Vec<RepMetrics> =
        pool.install(|| tasks.par_iter().map(|&(c, r)| run_replication(&configs[c], r, opts)).collect());
    let mut results = Vec::with_capacity(configs.len());
    for cfg in configs {
        let rest = metrics.split_off(opts.reps.min(metrics.len()));
        results.push(summarize_reps(*cfg, &opts.designs, std::mem::replace(&mut metrics, rest)));
    }
    Ok(results)
}
