//! Common-support regions and the trim-then-refit step.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::gps::{fit_multinomial_logit, predict_gps, FitOptions, GpsMatrix, GpsModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportKind {
    /// All-arm eligibility from the GPS vector.
    RectangularE4,
    /// Two-arm eligibility from a binary propensity score.
    PairwiseE2,
    /// Reference units eligible in both pairwise supports.
    CrmE3,
}

/// Support bounds plus per-unit eligibility.
///
/// For the rectangular kind `low`/`high` have one entry per arm; for the
/// pairwise kind they hold the single propensity-score interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonSupport {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub eligible: Vec<bool>,
    pub kind: SupportKind,
}

impl CommonSupport {
    pub fn n_eligible(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }

    pub fn eligible_units(&self) -> Vec<usize> {
        (0..self.eligible.len()).filter(|&i| self.eligible[i]).collect()
    }
}

/// Per-component `(low, high)`: the largest per-arm minimum and the smallest
/// per-arm maximum of each GPS component.
pub fn support_bounds(gps: &GpsMatrix, ds: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let z = ds.n_arms();
    if gps.n_units() != ds.n_units() || gps.n_arms() != z {
        return Err(Error::Contract("GPS matrix does not match the dataset".into()));
    }
    let mut arm_min = vec![vec![f64::INFINITY; z]; z];
    let mut arm_max = vec![vec![f64::NEG_INFINITY; z]; z];
    for i in 0..ds.n_units() {
        let arm = ds.arm(i);
        for t in 0..z {
            let p = gps.prob(i, t);
            arm_min[arm][t] = arm_min[arm][t].min(p);
            arm_max[arm][t] = arm_max[arm][t].max(p);
        }
    }
    let low = (0..z)
        .map(|t| arm_min.iter().map(|m| m[t]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let high = (0..z)
        .map(|t| arm_max.iter().map(|m| m[t]).fold(f64::INFINITY, f64::min))
        .collect();
    Ok((low, high))
}

/// Strict interior test; a collapsed interval (`low == high`) admits exactly
/// its single value.
fn inside(v: f64, low: f64, high: f64) -> bool {
    if low == high {
        v == low
    } else {
        low < v && v < high
    }
}

/// Rectangular all-arm support: a unit is eligible when every GPS component
/// lies strictly inside `(low, high)`.
pub fn rectangular_support(gps: &GpsMatrix, ds: &Dataset) -> Result<CommonSupport> {
    let (low, high) = support_bounds(gps, ds)?;
    let eligible: Vec<bool> = (0..ds.n_units())
        .map(|i| (0..ds.n_arms()).all(|t| inside(gps.prob(i, t), low[t], high[t])))
        .collect();
    let mut per_arm = vec![0usize; ds.n_arms()];
    for i in 0..ds.n_units() {
        per_arm[ds.arm(i)] += usize::from(eligible[i]);
    }
    if let Some(arm) = per_arm.iter().position(|&c| c == 0) {
        return Err(Error::EmptySupport { arm });
    }
    Ok(CommonSupport { low, high, eligible, kind: SupportKind::RectangularE4 })
}

/// Output of [`trim_and_refit`].
#[derive(Debug, Clone)]
pub struct Trimmed {
    /// Surviving units, in original order.
    pub data: Dataset,
    /// Original indices of the surviving units.
    pub kept: Vec<usize>,
    pub first_model: GpsModel,
    /// First-pass support over the original units, kept for reporting.
    pub first_support: CommonSupport,
    /// Model re-fitted on the survivors.
    pub model: GpsModel,
    /// Re-fitted GPS for the survivors.
    pub gps: GpsMatrix,
}

impl Trimmed {
    pub fn n_dropped(&self) -> usize {
        self.first_support.eligible.len() - self.kept.len()
    }

    pub fn dropped_fraction(&self) -> f64 {
        self.n_dropped() as f64 / self.first_support.eligible.len() as f64
    }
}

/// Fit, drop units outside the rectangular support, re-fit exactly once on the
/// survivors and recompute their GPS. There is no second trim.
pub fn trim_and_refit(ds: &Dataset, opts: &FitOptions) -> Result<Trimmed> {
    let first_model = fit_multinomial_logit(ds, opts)?;
    let first_gps = predict_gps(&first_model, ds)?;
    let first_support = rectangular_support(&first_gps, ds)?;
    let kept = first_support.eligible_units();
    let data = ds.subset(&kept)?;
    let model = fit_multinomial_logit(&data, opts)?;
    let gps = predict_gps(&model, &data)?;
    Ok(Trimmed { data, kept, first_model, first_support, model, gps })
}

/// Pairwise support from binary propensity scores of the units of two arms.
///
/// `arms[i]` is the arm of the unit scored by `scores[i]`; eligible units lie
/// strictly inside the intersection of the two arms' observed score ranges.
pub fn pairwise_support(scores: &[f64], arms: &[usize], pair: (usize, usize)) -> Result<CommonSupport> {
    if scores.len() != arms.len() {
        return Err(Error::Contract("scores and arms differ in length".into()));
    }
    let range = |t: usize| {
        scores
            .iter()
            .zip(arms)
            .filter(|(_, &a)| a == t)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&s, _)| (lo.min(s), hi.max(s)))
    };
    let (lo_a, hi_a) = range(pair.0);
    let (lo_b, hi_b) = range(pair.1);
    if !lo_a.is_finite() {
        return Err(Error::EmptySupport { arm: pair.0 });
    }
    if !lo_b.is_finite() {
        return Err(Error::EmptySupport { arm: pair.1 });
    }
    let low = lo_a.max(lo_b);
    let high = hi_a.min(hi_b);
    let eligible: Vec<bool> = scores
        .iter()
        .zip(arms)
        .map(|(&s, &a)| (a == pair.0 || a == pair.1) && inside(s, low, high))
        .collect();
    for t in [pair.0, pair.1] {
        if !eligible.iter().zip(arms).any(|(&e, &a)| e && a == t) {
            return Err(Error::EmptySupport { arm: t });
        }
    }
    Ok(CommonSupport { low: vec![low], high: vec![high], eligible, kind: SupportKind::PairwiseE2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::prng;
    use rand::Rng;

    fn ds_with_arms(treat: Vec<usize>, z: usize) -> Dataset {
        let n = treat.len();
        Dataset::with_numbered_arms((0..n).map(|i| i as f64).collect(), 1, treat, z).unwrap()
    }

    #[test]
    fn identical_rows_are_all_eligible() {
        let ds = ds_with_arms(vec![0, 0, 0, 1, 1, 1, 2, 2, 2], 3);
        let probs = [0.2, 0.3, 0.5].repeat(9);
        let gps = GpsMatrix::from_probs(probs, 3).unwrap();
        let s = rectangular_support(&gps, &ds).unwrap();
        assert_eq!(s.n_eligible(), 9);
    }

    #[test]
    fn arm_extremes_on_the_bounds_are_dropped() {
        let ds = ds_with_arms(vec![0, 0, 0, 1, 1, 1, 2, 2, 2], 3);
        let mut probs = Vec::new();
        for i in 0..9 {
            let d = [-1e-3, 0.0, 1e-3][i % 3];
            probs.extend([0.2 + d, 0.3 - d, 0.5]);
        }
        let gps = GpsMatrix::from_probs(probs, 3).unwrap();
        let s = rectangular_support(&gps, &ds).unwrap();
        assert_eq!(s.eligible, vec![false, true, false, false, true, false, false, true, false]);
    }

    fn brute_force_flags(probs: &[[f64; 3]], arms: &[usize]) -> Vec<bool> {
        let mut flags = Vec::new();
        for row in probs {
            let mut ok = true;
            for t in 0..3 {
                let mut low = f64::NEG_INFINITY;
                let mut high = f64::INFINITY;
                for arm in 0..3 {
                    let vals: Vec<f64> = probs
                        .iter()
                        .zip(arms)
                        .filter(|(_, &a)| a == arm)
                        .map(|(r, _)| r[t])
                        .collect();
                    let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    low = low.max(mn);
                    high = high.min(mx);
                }
                ok &= if low == high { row[t] == low } else { row[t] > low && row[t] < high };
            }
            flags.push(ok);
        }
        flags
    }

    #[test]
    fn hand_built_matrix_matches_definition() {
        let probs = [
            [0.50, 0.30, 0.20],
            [0.40, 0.35, 0.25],
            [0.30, 0.40, 0.30],
            [0.35, 0.33, 0.32],
            [0.20, 0.50, 0.30],
            [0.25, 0.30, 0.45],
        ];
        let arms = vec![0, 0, 1, 1, 2, 2];
        let flags = brute_force_flags(&probs, &arms);
        let ds = ds_with_arms(arms, 3);
        let gps = GpsMatrix::from_probs(probs.iter().flatten().copied().collect(), 3).unwrap();
        match rectangular_support(&gps, &ds) {
            Ok(s) => assert_eq!(s.eligible, flags),
            Err(Error::EmptySupport { arm }) => {
                assert!(!flags.iter().zip(ds.treatment()).any(|(&f, &a)| f && a == arm));
            }
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn random_matrices_match_definition() {
        let mut rng = prng(4);
        for _ in 0..200 {
            let arms: Vec<usize> = (0..12).map(|i| i % 3).collect();
            let probs: Vec<[f64; 3]> = (0..12)
                .map(|_| {
                    let a: f64 = rng.random_range(0.05..1.0);
                    let b: f64 = rng.random_range(0.05..1.0);
                    let c: f64 = rng.random_range(0.05..1.0);
                    let s = a + b + c;
                    [a / s, b / s, c / s]
                })
                .collect();
            let flags = brute_force_flags(&probs, &arms);
            let ds = ds_with_arms(arms.clone(), 3);
            let gps = GpsMatrix::from_probs(probs.iter().flatten().copied().collect(), 3).unwrap();
            match rectangular_support(&gps, &ds) {
                Ok(s) => assert_eq!(s.eligible, flags),
                Err(Error::EmptySupport { arm }) => {
                    assert!(!flags.iter().zip(&arms).any(|(&f, &a)| f && a == arm));
                }
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn separated_arm_empties_support() {
        let ds = ds_with_arms(vec![0, 0, 0, 1, 1, 1, 2, 2, 2], 3);
        let mut probs = Vec::new();
        for i in 0..9 {
            let arm = i / 3;
            let jitter = 0.01 * (i % 3) as f64;
            let p0 = if arm == 2 { 0.05 + jitter } else { 0.4 + jitter };
            let p1 = 0.3 + jitter;
            probs.extend([p0, p1, 1.0 - p0 - p1]);
        }
        let gps = GpsMatrix::from_probs(probs, 3).unwrap();
        assert!(matches!(rectangular_support(&gps, &ds), Err(Error::EmptySupport { .. })));
    }

    #[test]
    fn pairwise_interval_intersection() {
        let scores = [0.2, 0.5, 0.8, 0.4, 0.6, 0.9];
        let arms = [0, 0, 0, 1, 1, 1];
        let s = pairwise_support(&scores, &arms, (0, 1)).unwrap();
        assert_eq!(s.low, vec![0.4]);
        assert_eq!(s.high, vec![0.8]);
        assert_eq!(s.eligible, vec![false, true, false, false, true, false]);
    }

    #[test]
    fn pairwise_disjoint_ranges_fail() {
        let scores = [0.1, 0.2, 0.7, 0.8];
        let arms = [0, 0, 1, 1];
        assert!(matches!(pairwise_support(&scores, &arms, (0, 1)), Err(Error::EmptySupport { .. })));
    }

    #[test]
    fn pairwise_identical_scores_all_eligible() {
        let scores = [0.5; 6];
        let arms = [0, 0, 0, 1, 1, 1];
        let s = pairwise_support(&scores, &arms, (0, 1)).unwrap();
        assert!(s.eligible.iter().all(|&e| e));
    }

    #[test]
    fn pairwise_identical_ranges_keep_interior() {
        let scores = [0.1, 0.5, 0.9, 0.1, 0.5, 0.9];
        let arms = [0, 0, 0, 1, 1, 1];
        let s = pairwise_support(&scores, &arms, (0, 1)).unwrap();
        assert_eq!(s.eligible, vec![false, true, false, false, true, false]);
    }

    proptest::proptest! {
        #[test]
        fn shrinking_an_arm_range_never_adds_units(seed in 0u64..5000, shrink in 0.0f64..1.0) {
            let mut rng = prng(seed);
            let arms: Vec<usize> = (0..15).map(|i| i % 3).collect();
            let rows: Vec<[f64; 3]> = (0..15).map(|_| {
                let a: f64 = rng.random_range(0.05..1.0);
                let b: f64 = rng.random_range(0.05..1.0);
                let c: f64 = rng.random_range(0.05..1.0);
                let s = a + b + c;
                [a / s, b / s, c / s]
            }).collect();
            // pull arm 2's component-0 values toward their mean
            let m: f64 = rows.iter().zip(&arms).filter(|(_, &a)| a == 2).map(|(r, _)| r[0]).sum::<f64>() / 5.0;
            let shrunk: Vec<[f64; 3]> = rows.iter().zip(&arms).map(|(r, &a)| {
                if a == 2 {
                    let p0 = m + (r[0] - m) * shrink;
                    let rest = r[1] + r[2];
                    [p0, r[1] / rest * (1.0 - p0), r[2] / rest * (1.0 - p0)]
                } else { *r }
            }).collect();
            let ds = ds_with_arms(arms.clone(), 3);
            let g0 = GpsMatrix::from_probs(rows.iter().flatten().copied().collect(), 3).unwrap();
            let g1 = GpsMatrix::from_probs(shrunk.iter().flatten().copied().collect(), 3).unwrap();
            let (l0, h0) = support_bounds(&g0, &ds).unwrap();
            let (l1, h1) = support_bounds(&g1, &ds).unwrap();
            proptest::prop_assert!(l1[0] >= l0[0] && h1[0] <= h0[0]);
            for i in 0..15 {
                if arms[i] != 2 {
                    let in0 = |r: &[f64; 3], lo: f64, hi: f64| r[0] > lo && r[0] < hi;
                    proptest::prop_assert!(!in0(&rows[i], l1[0], h1[0]) || in0(&rows[i], l0[0], h0[0]));
                }
            }
        }

        #[test]
        fn eligibility_is_permutation_equivariant(seed in 0u64..5000) {
            let mut rng = prng(seed);
            let arms: Vec<usize> = (0..12).map(|i| i % 3).collect();
            let rows: Vec<[f64; 3]> = (0..12).map(|_| {
                let a: f64 = rng.random_range(0.05..1.0);
                let b: f64 = rng.random_range(0.05..1.0);
                let c: f64 = rng.random_range(0.05..1.0);
                let s = a + b + c;
                [a / s, b / s, c / s]
            }).collect();
            let perm = [2usize, 0, 1];
            let relabeled_arms: Vec<usize> = arms.iter().map(|&a| perm[a]).collect();
            let relabeled_rows: Vec<[f64; 3]> = rows.iter().map(|r| {
                let mut out = [0.0; 3];
                for t in 0..3 { out[perm[t]] = r[t]; }
                out
            }).collect();
            proptest::prop_assert_eq!(
                brute_force_flags(&rows, &arms),
                brute_force_flags(&relabeled_rows, &relabeled_arms)
            );
            let ds = ds_with_arms(arms.clone(), 3);
            let ds2 = ds_with_arms(relabeled_arms.clone(), 3);
            let g = GpsMatrix::from_probs(rows.iter().flatten().copied().collect(), 3).unwrap();
            let g2 = GpsMatrix::from_probs(relabeled_rows.iter().flatten().copied().collect(), 3).unwrap();
            let (l, h) = support_bounds(&g, &ds).unwrap();
            let (l2, h2) = support_bounds(&g2, &ds2).unwrap();
            for t in 0..3 {
                proptest::prop_assert_eq!(l[t], l2[perm[t]]);
                proptest::prop_assert_eq!(h[t], h2[perm[t]]);
            }
        }
    }
}
