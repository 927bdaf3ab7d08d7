//! One-to-one nearest-neighbour caliper matching on scalar scores.
//!
//! Indices in a [`PairMatch`] are positions in the score slices handed to the
//! matcher; callers translate them back to unit indices.

use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMatch {
    pub reference_unit: usize,
    pub matched_unit: usize,
    /// Absolute score difference.
    pub distance: f64,
    pub stratum: Option<usize>,
}

/// Order in which reference units pick candidates when matching without
/// replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyOrder {
    #[default]
    DescendingScore,
    AscendingScore,
    InputOrder,
    /// A seeded uniform shuffle of the reference units.
    Random { seed: u64 },
}

fn check(ref_scores: &[f64], cand_scores: &[f64], caliper: f64) -> Result<()> {
    if !(caliper >= 0.0) {
        return Err(Error::Contract(format!("caliper must be nonnegative, got {caliper}")));
    }
    if ref_scores.iter().chain(cand_scores).any(|s| !s.is_finite()) {
        return Err(Error::Contract("matching scores must be finite".into()));
    }
    Ok(())
}

/// Distinct candidate scores in ascending order, each with the smallest
/// candidate index carrying it.
fn distinct_scores(cand_scores: &[f64]) -> Vec<(f64, usize)> {
    let mut sorted: Vec<(f64, usize)> = cand_scores.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    sorted.dedup_by(|later, first| later.0 == first.0);
    sorted
}

/// Each reference unit independently takes its nearest candidate when the
/// distance is within the caliper; ties go to the smallest candidate index.
pub fn caliper_nn_with_replacement(ref_scores: &[f64], cand_scores: &[f64], caliper: f64) -> Result<Vec<PairMatch>> {
    check(ref_scores, cand_scores, caliper)?;
    if cand_scores.is_empty() {
        return Ok(Vec::new());
    }
    let distinct = distinct_scores(cand_scores);
    let mut out = Vec::new();
    for (r, &s) in ref_scores.iter().enumerate() {
        let pos = distinct.partition_point(|&(c, _)| c < s);
        let mut best: Option<(f64, usize)> = None;
        for &(c, idx) in distinct[pos.saturating_sub(1)..(pos + 1).min(distinct.len())].iter() {
            let d = (s - c).abs();
            best = match best {
                Some((bd, bi)) if bd < d || (bd == d && bi < idx) => Some((bd, bi)),
                _ => Some((d, idx)),
            };
        }
        if let Some((d, idx)) = best {
            if d <= caliper {
                out.push(PairMatch { reference_unit: r, matched_unit: idx, distance: d, stratum: None });
            }
        }
    }
    Ok(out)
}

/// Greedy matching without replacement: reference units, visited in `order`,
/// each take the nearest still-unused candidate within the caliper.
///
/// Ties among reference units are visited by index; ties among candidates go
/// to the smallest index.
pub fn caliper_nn_without_replacement(
    ref_scores: &[f64],
    cand_scores: &[f64],
    caliper: f64,
    order: GreedyOrder,
) -> Result<Vec<PairMatch>> {
    check(ref_scores, cand_scores, caliper)?;
    let mut pool: BTreeSet<(OrderedFloat<f64>, usize)> =
        cand_scores.iter().enumerate().map(|(j, &s)| (OrderedFloat(s), j)).collect();
    let mut visit: Vec<usize> = (0..ref_scores.len()).collect();
    match order {
        GreedyOrder::DescendingScore => {
            visit.sort_by(|&a, &b| ref_scores[b].total_cmp(&ref_scores[a]).then(a.cmp(&b)))
        }
        GreedyOrder::AscendingScore => {
            visit.sort_by(|&a, &b| ref_scores[a].total_cmp(&ref_scores[b]).then(a.cmp(&b)))
        }
        GreedyOrder::InputOrder => {}
        GreedyOrder::Random { seed } => visit.shuffle(&mut crate::rng::prng(seed)),
    }
    let mut out = Vec::new();
    for r in visit {
        if pool.is_empty() {
            break;
        }
        let s = OrderedFloat(ref_scores[r]);
        let below = pool
            .range(..(s, 0))
            .next_back()
            .and_then(|&(c, _)| pool.range((c, 0)..).next().copied());
        let above = pool.range((s, 0)..).next().copied();
        let best = [below, above]
            .into_iter()
            .flatten()
            .map(|(c, j)| ((s.0 - c.0).abs(), j, c))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((d, j, c)) = best {
            if d <= caliper {
                pool.remove(&(c, j));
                out.push(PairMatch { reference_unit: r, matched_unit: j, distance: d, stratum: None });
            }
        }
    }
    out.sort_by_key(|m| m.reference_unit);
    Ok(out)
}

/// Sample standard deviation (denominator `n - 1`).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `epsilon` times the sample standard deviation of the pooled scores.
pub fn caliper_from_sd(scores: &[f64], epsilon: f64) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::Contract("caliper needs at least two scores".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Contract(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let width = epsilon * sample_sd(scores);
    if width == 0.0 {
        warn!("caliper width is zero; only exact score ties can match");
    }
    Ok(width)
}
