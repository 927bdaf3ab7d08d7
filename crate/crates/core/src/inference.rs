//! Point estimates from matched and weighted designs, and the Friedman and
//! Quade tests over matched sets.
//!
//! Sets are treated as exchangeable blocks even when non-reference units
//! recur across sets; no variance estimates are offered.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::data::Dataset;
use crate::designs::{MatchedCohort, WeightVector};
use crate::{Error, Result};

/// Exact permutation p-values are computed up to this many blocks by default.
pub const DEFAULT_EXACT_THRESHOLD: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Satt {
    pub reference: usize,
    pub comparator: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimates {
    pub satt: Vec<Satt>,
    pub n_trip: usize,
}

impl EffectEstimates {
    pub fn get(&self, comparator: usize) -> Option<f64> {
        self.satt.iter().find(|s| s.comparator == comparator).map(|s| s.estimate)
    }
}

/// ψ-weighted mean outcome of each cohort arm, over `n_trip`.
pub fn matched_outcome_means(cohort: &MatchedCohort, ds: &Dataset) -> Result<Vec<f64>> {
    let y = ds.require_outcome()?;
    if cohort.n_trip() == 0 {
        return Err(Error::Contract("the cohort has no matched sets".into()));
    }
    if cohort.psi.len() != ds.n_units() {
        return Err(Error::Contract("multiplicities do not cover the dataset".into()));
    }
    Ok(cohort
        .arms
        .iter()
        .map(|&t| {
            ds.units_in_arm(t).iter().map(|&i| y[i] * cohort.psi[i] as f64).sum::<f64>() / cohort.n_trip() as f64
        })
        .collect())
}

/// SATT of the reference against every other cohort arm.
pub fn satt_estimates(cohort: &MatchedCohort, ds: &Dataset) -> Result<EffectEstimates> {
    let means = matched_outcome_means(cohort, ds)?;
    let r = cohort.arms.iter().position(|&a| a == cohort.reference).expect("reference is in arms");
    let satt = cohort
        .arms
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != r)
        .map(|(j, &t)| Satt { reference: cohort.reference, comparator: t, estimate: means[r] - means[j] })
        .collect();
    Ok(EffectEstimates { satt, n_trip: cohort.n_trip() })
}

/// Difference of self-normalized weighted outcome means, `pair.0 - pair.1`.
pub fn ipw_pate(ds: &Dataset, weights: &WeightVector, pair: (usize, usize)) -> Result<f64> {
    let y = ds.require_outcome()?;
    if weights.weights.len() != ds.n_units() {
        return Err(Error::Contract("weights do not cover the dataset".into()));
    }
    let mean = |t: usize| {
        let (num, den) = ds
            .units_in_arm(t)
            .iter()
            .fold((0.0, 0.0), |(n, d), &i| (n + weights.weights[i] * y[i], d + weights.weights[i]));
        if den > 0.0 {
            Ok(num / den)
        } else {
            Err(Error::UndefinedMean { arm: t })
        }
    };
    Ok(mean(pair.0)? - mean(pair.1)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: usize,
    /// Denominator degrees of freedom of an F reference distribution.
    pub dof_denominator: Option<usize>,
    pub p_value_asymptotic: f64,
    pub p_value_exact: Option<f64>,
}

/// Outcomes arranged as one row per matched set, columns in `cohort.arms` order.
pub fn outcome_matrix(cohort: &MatchedCohort, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    let y = ds.require_outcome()?;
    Ok(cohort.sets.iter().map(|s| s.iter().map(|&u| y[u]).collect()).collect())
}

/// Mid-ranks (1-based, ties averaged) doubled so they are integers.
pub fn doubled_midranks(values: &[f64]) -> Vec<i64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1..=end share (start+1+end)/2
        let doubled = (start + 1 + end) as i64;
        for &k in &order[start..end] {
            ranks[k] = doubled;
        }
        start = end;
    }
    ranks
}

fn check_matrix(m: &[Vec<f64>]) -> Result<(usize, usize)> {
    let b = m.len();
    let k = m.first().map_or(0, Vec::len);
    if b < 2 || k < 2 {
        return Err(Error::Contract("rank tests need at least two sets and two arms".into()));
    }
    if m.iter().any(|row| row.len() != k) {
        return Err(Error::Contract("all sets must have the same number of arms".into()));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Contract("outcomes must be finite".into()));
    }
    Ok((b, k))
}

/// Number of within-block permutations whose column-sum score is at least
/// `observed`, over all `(k!)^b` relabelings. Each block contributes a vector
/// of integer scores that is permuted; the score is the sum of squared column
/// totals.
fn permutation_tail(blocks: &[Vec<i64>], observed: i64) -> f64 {
    let k = blocks[0].len();
    let perms = permutations(k);
    let mut dist: HashMap<Vec<i64>, f64> = HashMap::from([(vec![0; k], 1.0)]);
    for block in blocks {
        let mut next: HashMap<Vec<i64>, f64> = HashMap::with_capacity(dist.len() * perms.len());
        for (state, &count) in &dist {
            for perm in &perms {
                let key: Vec<i64> = state.iter().zip(perm).map(|(s, &j)| s + block[j]).collect();
                *next.entry(key).or_insert(0.0) += count;
            }
        }
        dist = next;
    }
    let total: f64 = dist.values().sum();
    let hit: f64 = dist
        .iter()
        .filter(|(state, _)| state.iter().map(|s| s * s).sum::<i64>() >= observed)
        .map(|(_, &c)| c)
        .sum();
    hit / total
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                go(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

fn exact_feasible(b: usize, k: usize, threshold: usize) -> bool {
    b <= threshold && k <= 6
}

/// Friedman test with mid-ranks and the tie-corrected denominator.
///
/// The statistic is zero when every set is entirely tied. Exact p-values
/// enumerate all within-set permutations when there are at most
/// `exact_threshold` sets.
pub fn friedman_test(m: &[Vec<f64>], exact_threshold: usize) -> Result<TestResult> {
    let (b, k) = check_matrix(m)?;
    let ranks: Vec<Vec<i64>> = m.iter().map(|row| doubled_midranks(row)).collect();
    let col = |j: usize| ranks.iter().map(|r| r[j]).sum::<i64>();
    let sum_sq: i64 = (0..k).map(|j| col(j) * col(j)).sum();
    // all quantities below use doubled ranks, hence the factors of 4
    let a1: f64 = ranks.iter().flatten().map(|&r| (r * r) as f64).sum::<f64>() / 4.0;
    let (bf, kf) = (b as f64, k as f64);
    let c1 = bf * kf * (kf + 1.0).powi(2) / 4.0;
    let numerator = (kf - 1.0) * (sum_sq as f64 / 4.0 - bf * bf * kf * (kf + 1.0).powi(2) / 4.0);
    let denom = a1 - c1;
    let statistic = if denom <= 1e-12 * a1 { 0.0 } else { (numerator / denom).max(0.0) };
    let p_value_asymptotic = if statistic == 0.0 {
        1.0
    } else {
        ChiSquared::new(kf - 1.0).map_err(|e| Error::Numerical(e.to_string()))?.sf(statistic)
    };
    let p_value_exact = exact_feasible(b, k, exact_threshold).then(|| {
        if statistic == 0.0 {
            1.0
        } else {
            permutation_tail(&ranks, sum_sq)
        }
    });
    Ok(TestResult { statistic, dof: k - 1, dof_denominator: None, p_value_asymptotic, p_value_exact })
}

/// Quade test: within-set ranks weighted by the rank of the set's range,
/// referred to an F distribution with `(k - 1, (b - 1)(k - 1))` degrees of
/// freedom.
pub fn quade_test(m: &[Vec<f64>], exact_threshold: usize) -> Result<TestResult> {
    let (b, k) = check_matrix(m)?;
    let ranges: Vec<f64> = m
        .iter()
        .map(|row| {
            let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            hi - lo
        })
        .collect();
    if ranges.iter().all(|&r| r == 0.0) {
        return Err(Error::Degenerate("every matched set has zero outcome range".into()));
    }
    let q2 = doubled_midranks(&ranges);
    // 4 * S_ij = (2 Q_i) (2 R_ij - (k + 1))
    let scaled: Vec<Vec<i64>> = m
        .iter()
        .zip(&q2)
        .map(|(row, &q)| doubled_midranks(row).into_iter().map(|r| q * (r - (k as i64 + 1))).collect())
        .collect();
    let col = |j: usize| scaled.iter().map(|r| r[j]).sum::<i64>();
    let sum_sq: i64 = (0..k).map(|j| col(j) * col(j)).sum();
    let a2_16: i64 = scaled.iter().flatten().map(|&s| s * s).sum();
    let a2 = a2_16 as f64 / 16.0;
    let bq = sum_sq as f64 / 16.0 / b as f64;
    let df1 = k - 1;
    let df2 = (b - 1) * (k - 1);
    let (statistic, p_value_asymptotic) = if a2_16 * b as i64 == sum_sq {
        (f64::INFINITY, 0.0)
    } else {
        let t = (b as f64 - 1.0) * bq / (a2 - bq);
        let f = FisherSnedecor::new(df1 as f64, df2 as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        (t, f.sf(t))
    };
    let p_value_exact = exact_feasible(b, k, exact_threshold).then(|| permutation_tail(&scaled, sum_sq));
    Ok(TestResult { statistic, dof: df1, dof_denominator: Some(df2), p_value_asymptotic, p_value_exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::DesignTag;

    fn ds_with_y(y: Vec<f64>, treat: Vec<usize>) -> Dataset {
        let n = y.len();
        Dataset::with_numbered_arms(vec![0.0; n], 1, treat, 3).unwrap().with_outcome(y).unwrap()
    }

    #[test]
    fn one_set_closed_form() {
        let ds = ds_with_y(vec![3.0, 1.0, 5.0], vec![0, 1, 2]);
        let c = MatchedCohort::from_sets(DesignTag::Vm, 0, vec![0, 1, 2], vec![vec![0, 1, 2]], 3).unwrap();
        let e = satt_estimates(&c, &ds).unwrap();
        assert_eq!(e.get(1), Some(2.0));
        assert_eq!(e.get(2), Some(-2.0));
    }

    #[test]
    fn constant_outcome_gives_zero_effects() {
        let ds = ds_with_y(vec![7.0; 6], vec![0, 0, 1, 1, 2, 2]);
        let c = MatchedCohort::from_sets(DesignTag::Vm, 0, vec![0, 1, 2], vec![vec![0, 2, 4], vec![1, 2, 5]], 6)
            .unwrap();
        let e = satt_estimates(&c, &ds).unwrap();
        assert!(e.satt.iter().all(|s| s.estimate == 0.0));
        let w = WeightVector { weights: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0] };
        assert_eq!(ipw_pate(&ds, &w, (0, 2)).unwrap(), 0.0);
    }

    #[test]
    fn missing_outcome_is_rejected() {
        let ds = Dataset::with_numbered_arms(vec![0.0; 3], 1, vec![0, 1, 2], 3).unwrap();
        let c = MatchedCohort::from_sets(DesignTag::Vm, 0, vec![0, 1, 2], vec![vec![0, 1, 2]], 3).unwrap();
        assert!(matches!(satt_estimates(&c, &ds), Err(Error::Contract(_))));
    }

    #[test]
    fn ipw_hand_instance() {
        let ds = ds_with_y(vec![1.0, 3.0, 2.0, 6.0, 0.0, 0.0], vec![0, 0, 1, 1, 2, 2]);
        let w = WeightVector { weights: vec![1.0, 3.0, 2.0, 2.0, 1.0, 1.0] };
        // arm 0: (1 + 9) / 4 = 2.5 ; arm 1: (4 + 12) / 4 = 4
        assert!((ipw_pate(&ds, &w, (0, 1)).unwrap() + 1.5).abs() < 1e-12);
        let uniform = WeightVector { weights: vec![2.0; 6] };
        assert!((ipw_pate(&ds, &uniform, (0, 1)).unwrap() - (2.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn midranks() {
        assert_eq!(doubled_midranks(&[3.0, 1.0, 2.0]), vec![6, 2, 4]);
        assert_eq!(doubled_midranks(&[1.0, 1.0, 5.0]), vec![3, 3, 6]);
        assert_eq!(doubled_midranks(&[2.0, 2.0, 2.0]), vec![4, 4, 4]);
    }

    #[test]
    fn friedman_all_ties() {
        let m = vec![vec![1.0; 3]; 5];
        let r = friedman_test(&m, 8).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value_exact, Some(1.0));
    }

    #[test]
    fn friedman_concordance_is_two_b() {
        for b in 2..10 {
            let m = vec![vec![1.0, 2.0, 3.0]; b];
            let r = friedman_test(&m, 8).unwrap();
            assert!((r.statistic - 2.0 * b as f64).abs() < 1e-10);
            assert_eq!(r.dof, 2);
            if b <= 8 {
                // only the concordant labeling and its relabelings tie the maximum
                let p = r.p_value_exact.unwrap();
                assert!((p - 6.0 / 6f64.powi(b as i32)).abs() < 1e-12);
            } else {
                assert!(r.p_value_exact.is_none());
            }
        }
    }

    #[test]
    fn quade_concordance_and_degeneracy() {
        let m = vec![vec![1.0, 2.0, 4.0]; 4];
        let r = quade_test(&m, 8).unwrap();
        assert!(r.statistic.is_infinite());
        assert_eq!(r.p_value_asymptotic, 0.0);
        assert!((r.p_value_exact.unwrap() - 6.0 / 6f64.powi(4)).abs() < 1e-12);
        let spread = vec![vec![1.0, 2.0, 4.0], vec![0.0, 5.0, 9.0], vec![2.0, 3.0, 3.5], vec![1.0, 1.5, 8.0]];
        let r = quade_test(&spread, 8).unwrap();
        assert!((r.statistic - 15.0).abs() < 1e-12);
        assert_eq!(r.dof_denominator, Some(6));
        assert!(matches!(quade_test(&vec![vec![2.0; 3]; 4], 8), Err(Error::Degenerate(_))));
    }

    #[test]
    fn quade_known_value() {
        // ranges 2, 4, 1 -> Q = 2, 3, 1 ; S rows: (-2,0,2), (3,0,-3)... computed by hand
        let m = vec![vec![1.0, 2.0, 3.0], vec![5.0, 3.0, 1.0], vec![0.0, 0.5, 1.0]];
        let r = quade_test(&m, 0).unwrap();
        // S = Q (R - 2): (-2,0,2), (3,0,-3), (-1,0,1); A2 = 8 + 18 + 2 = 28
        // column sums (0, 0, 0) -> B = 0 -> T = 0
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value_asymptotic - 1.0).abs() < 1e-12);
        assert!(r.p_value_exact.is_none());
    }

    #[test]
    fn rank_tests_ignore_per_set_shifts() {
        let m = vec![vec![1.0, 4.0, 2.0], vec![3.0, 2.5, 9.0], vec![0.5, 7.0, 1.0], vec![5.0, 1.0, 6.0]];
        let shifted: Vec<Vec<f64>> =
            m.iter().enumerate().map(|(i, r)| r.iter().map(|v| v + 10.0 * i as f64).collect()).collect();
        assert_eq!(friedman_test(&m, 8).unwrap(), friedman_test(&shifted, 8).unwrap());
        assert_eq!(quade_test(&m, 8).unwrap(), quade_test(&shifted, 8).unwrap());
        let cubed: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|v| v * v * v).collect()).collect();
        assert_eq!(friedman_test(&m, 8).unwrap(), friedman_test(&cubed, 8).unwrap());
    }
}
