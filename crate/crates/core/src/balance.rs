//! Covariate balance: design-weighted arm means, standardized pairwise biases,
//! Max2SB and the fraction of eligible reference units matched.

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::designs::{MatchedCohort, Subclassification, WeightVector};
use crate::matcher::sample_sd;
use crate::{Error, Result};

/// Conventional cutoff for two arms.
pub const BINARY_SB_CUTOFF: f64 = 0.25;
/// Cutoff used with several arms.
pub const MULTI_SB_CUTOFF: f64 = 0.20;

/// How units are combined into arm means.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    Unweighted,
    Matched(&'a MatchedCohort),
    Ipw(&'a WeightVector),
    Subclass(&'a Subclassification),
}

/// Standard deviation (denominator `n - 1`) of every covariate among the
/// units of `reference`. Pass the full, untrimmed sample.
pub fn reference_sd(ds: &Dataset, reference: usize) -> Result<Vec<f64>> {
    let units = ds.units_in_arm(reference);
    if units.len() < 2 {
        return Err(Error::Validation(format!(
            "reference arm {reference} needs two units for a standard deviation"
        )));
    }
    Ok((0..ds.n_covariates())
        .map(|p| sample_sd(&units.iter().map(|&i| ds.covariate(i, p)).collect::<Vec<_>>()))
        .collect())
}

/// Arm-by-covariate means of `arms` under the given weighting.
pub fn weighted_means(ds: &Dataset, arms: &[usize], weighting: Weighting<'_>) -> Result<Vec<Vec<f64>>> {
    let p = ds.n_covariates();
    let mut out = Vec::with_capacity(arms.len());
    for &t in arms {
        let units = ds.units_in_arm(t);
        let means = match weighting {
            Weighting::Unweighted => weighted_mean(ds, &units, |_| 1.0, t)?,
            Weighting::Ipw(w) => {
                if w.weights.len() != ds.n_units() {
                    return Err(Error::Contract("weights do not cover the dataset".into()));
                }
                weighted_mean(ds, &units, |i| w.weights[i], t)?
            }
            Weighting::Matched(c) => {
                if c.psi.len() != ds.n_units() {
                    return Err(Error::Contract("multiplicities do not cover the dataset".into()));
                }
                if c.n_trip() == 0 {
                    return Err(Error::UndefinedMean { arm: t });
                }
                let mut sums = vec![0.0; p];
                for &i in &units {
                    let psi = c.psi[i] as f64;
                    if psi > 0.0 {
                        sums.iter_mut().zip(ds.row(i)).for_each(|(s, x)| *s += x * psi);
                    }
                }
                let total: usize = units.iter().map(|&i| c.psi[i]).sum();
                if total == 0 {
                    return Err(Error::UndefinedMean { arm: t });
                }
                sums.into_iter().map(|s| s / c.n_trip() as f64).collect()
            }
            Weighting::Subclass(sub) => subclass_mean(ds, sub, t)?,
        };
        out.push(means);
    }
    Ok(out)
}

fn weighted_mean(ds: &Dataset, units: &[usize], w: impl Fn(usize) -> f64, arm: usize) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; ds.n_covariates()];
    let mut mass = 0.0;
    for &i in units {
        let wi = w(i);
        mass += wi;
        sums.iter_mut().zip(ds.row(i)).for_each(|(s, x)| *s += x * wi);
    }
    if !(mass > 0.0) {
        return Err(Error::UndefinedMean { arm });
    }
    Ok(sums.into_iter().map(|s| s / mass).collect())
}

fn subclass_mean(ds: &Dataset, sub: &Subclassification, arm: usize) -> Result<Vec<f64>> {
    if sub.subclass.len() != ds.n_units() {
        return Err(Error::Contract("subclass vector does not cover the dataset".into()));
    }
    let p = ds.n_covariates();
    let k = sub.k();
    let mut sums = vec![vec![0.0; p]; k];
    for i in ds.units_in_arm(arm) {
        let s = sub.subclass[i];
        sums[s].iter_mut().zip(ds.row(i)).for_each(|(a, x)| *a += x);
    }
    let mut out = vec![0.0; p];
    let mut mass = 0.0;
    let mut skipped = 0;
    for s in 0..k {
        let n_arm = sub.counts[s][arm];
        if n_arm == 0 {
            skipped += 1;
            continue;
        }
        let size = sub.counts[s].iter().sum::<usize>() as f64;
        mass += size;
        for (o, v) in out.iter_mut().zip(&sums[s]) {
            *o += size * v / n_arm as f64;
        }
    }
    if skipped > 0 {
        info!("arm {arm}: {skipped} subclasses without units skipped and weights renormalized");
    }
    if mass == 0.0 {
        return Err(Error::UndefinedMean { arm });
    }
    Ok(out.into_iter().map(|v| v / mass).collect())
}

/// `(mean_a - mean_b) / delta`.
pub fn standardized_bias(mean_a: f64, mean_b: f64, delta: f64, covariate: usize) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::UndefinedBias { covariate });
    }
    Ok((mean_a - mean_b) / delta)
}

/// Largest absolute value; zero for an empty slice.
pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `n_trip / eligible_reference`; zero when nothing is eligible.
pub fn pct_matched(cohort: &MatchedCohort, eligible_reference: usize) -> f64 {
    if eligible_reference == 0 {
        return 0.0;
    }
    cohort.n_trip() as f64 / eligible_reference as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub arms: Vec<usize>,
    /// Pairs `(a, b)` of `arms`, in lexicographic position order.
    pub pairs: Vec<(usize, usize)>,
    /// `weighted_means[j][p]` for arm `arms[j]`.
    pub weighted_means: Vec<Vec<f64>>,
    /// `sb[p][k]` for covariate `p` and pair `pairs[k]`.
    pub sb: Vec<Vec<f64>>,
    pub max2sb: Vec<f64>,
    pub avg_abs_sb: Vec<f64>,
    pub mean_max2sb: f64,
    pub pct_matched: Option<f64>,
    pub denominators: Vec<f64>,
}

impl BalanceReport {
    /// Covariates whose Max2SB exceeds `cutoff`.
    pub fn exceeding(&self, cutoff: f64) -> Vec<usize> {
        (0..self.max2sb.len()).filter(|&p| self.max2sb[p] > cutoff).collect()
    }
}

/// Balance of `arms` under `weighting`, standardized by `denominators`
/// (see [`reference_sd`]).
pub fn balance_report(
    ds: &Dataset,
    arms: &[usize],
    weighting: Weighting<'_>,
    denominators: &[f64],
    pct_matched: Option<f64>,
) -> Result<BalanceReport> {
    if denominators.len() != ds.n_covariates() {
        return Err(Error::Contract("one denominator per covariate is required".into()));
    }
    if arms.len() < 2 {
        return Err(Error::Contract("balance needs at least two arms".into()));
    }
    let weighted_means = weighted_means(ds, arms, weighting)?;
    let mut pairs = Vec::new();
    let mut positions = Vec::new();
    for a in 0..arms.len() {
        for b in a + 1..arms.len() {
            pairs.push((arms[a], arms[b]));
            positions.push((a, b));
        }
    }
    let mut sb = Vec::with_capacity(ds.n_covariates());
    for (p, &delta) in denominators.iter().enumerate() {
        sb.push(
            positions
                .iter()
                .map(|&(a, b)| standardized_bias(weighted_means[a][p], weighted_means[b][p], delta, p))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let max2sb: Vec<f64> = sb.iter().map(|row| max_abs(row)).collect();
    let avg_abs_sb = sb.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>() / row.len() as f64).collect();
    let mean_max2sb = mean_max2sb(&max2sb);
    Ok(BalanceReport {
        arms: arms.to_vec(),
        pairs,
        weighted_means,
        sb,
        max2sb,
        avg_abs_sb,
        mean_max2sb,
        pct_matched,
        denominators: denominators.to_vec(),
    })
}

/// Average of per-covariate Max2SB values.
pub fn mean_max2sb(max2sb: &[f64]) -> f64 {
    max2sb.iter().sum::<f64>() / max2sb.len() as f64
}
