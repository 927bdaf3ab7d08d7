//! Binary-score matching applied to three arms: two covariates, arm means
//! `(0,0)`, `(a,0)`, `(0,a)`, and common referent matching of each replication.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{weighted_means, Weighting};
use crate::designs::{crm_match, BinaryOptions};
use crate::matcher::GreedyOrder;
use crate::rng::derive_seed;
use crate::sim::dgp::generate_interlude;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterludeSummary {
    pub reps: usize,
    /// `median[t][p]` of the matched mean of covariate `p` in arm `t`.
    pub median: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    /// Matched means of every replication, `per_rep[r][t][p]`.
    pub per_rep: Vec<Vec<Vec<f64>>>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn run_interlude(a: f64, sizes: [usize; 3], reps: usize, seed: u64, opts: &BinaryOptions) -> Result<InterludeSummary> {
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, &[r as u64]);
            let ds = generate_interlude(a, sizes, rep_seed)?;
            let order = match opts.order {
                GreedyOrder::Random { .. } => GreedyOrder::Random { seed: derive_seed(rep_seed, &[1]) },
                other => other,
            };
            let crm = crm_match(&ds, 0, &BinaryOptions { order, ..*opts })?;
            weighted_means(&ds, &[0, 1, 2], Weighting::Matched(&crm.cohort))
        })
        .collect::<Result<Vec<_>>>()?;
    let stat = |q: f64| -> Vec<Vec<f64>> {
        (0..3)
            .map(|t| {
                (0..2)
                    .map(|p| {
                        let mut v: Vec<f64> = per_rep.iter().map(|m| m[t][p]).collect();
                        v.sort_by(f64::total_cmp);
                        quantile(&v, q)
                    })
                    .collect()
            })
            .collect()
    };
    Ok(InterludeSummary { reps, median: stat(0.5), lower: stat(0.025), upper: stat(0.975), per_rep })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn small_run_shape() {
        let s = run_interlude(2.0, [40, 80, 80], 3, 1, &BinaryOptions::default()).unwrap();
        assert_eq!(s.per_rep.len(), 3);
        assert_eq!(s.median.len(), 3);
        for t in 0..3 {
            for p in 0..2 {
                assert!(s.lower[t][p] <= s.median[t][p] && s.median[t][p] <= s.upper[t][p]);
            }
        }
    }
}
