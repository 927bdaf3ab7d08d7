//! K-means on logit-GPS components.
//!
//! Lloyd iterations from D²-weighted seeding, best of several seeded restarts.
//! Points are passed row-major with an explicit dimension.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, prng, Prng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Stratum of each point, `0..k`.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
    pub seed: u64,
    pub attempts: usize,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// A single Lloyd run from fixed initial centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
    /// Objective after every iteration; non-increasing.
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn means(points: &[f64], dim: usize, assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in points.chunks(dim).zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Within-cluster sum of squares of an assignment against given centroids.
pub fn objective(points: &[f64], dim: usize, assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .chunks(dim)
        .zip(assignment)
        .map(|(x, &a)| sq_dist(x, &centroids[a]))
        .sum()
}

/// Lloyd iterations until the assignment stops changing or `max_iter`.
///
/// An empty cluster takes the point farthest from its own centroid among
/// clusters with more than one member.
pub fn lloyd(points: &[f64], dim: usize, init: Vec<Vec<f64>>, max_iter: usize) -> LloydRun {
    let n = points.len() / dim;
    let k = init.len();
    let mut centroids = init;
    let mut assignment = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut next = Vec::with_capacity(n);
        let mut dist = Vec::with_capacity(n);
        for x in points.chunks(dim) {
            let (c, d) = nearest(x, &centroids);
            next.push(c);
            dist.push(d);
        }
        let mut counts = vec![0usize; k];
        for &a in &next {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[next[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                });
            let Some(i) = donor else { break };
            counts[next[i]] -= 1;
            counts[empty] += 1;
            next[i] = empty;
            dist[i] = 0.0;
            centroids[empty] = points[i * dim..(i + 1) * dim].to_vec();
        }
        let changed = next != assignment;
        assignment = next;
        let updated = means(points, dim, &assignment, k);
        for (c, m) in updated.into_iter().enumerate() {
            if counts[c] > 0 {
                centroids[c] = m;
            }
        }
        trace.push(objective(points, dim, &assignment, &centroids));
        if !changed {
            break;
        }
    }
    let objective = *trace.last().expect("at least one iteration");
    LloydRun { assignment, centroids, objective, trace }
}

/// D²-weighted seeding: each new centroid is drawn with probability
/// proportional to its squared distance from the nearest chosen centroid.
pub fn seed_centroids(points: &[f64], dim: usize, k: usize, rng: &mut Prng) -> Vec<Vec<f64>> {
    let n = points.len() / dim;
    let point = |i: usize| points[i * dim..(i + 1) * dim].to_vec();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.chunks(dim).map(|x| sq_dist(x, &point(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        let c = point(pick);
        for (x, d) in points.chunks(dim).zip(d2.iter_mut()) {
            *d = d.min(sq_dist(x, &c));
        }
    }
    chosen.into_iter().map(point).collect()
}

fn validate(points: &[f64], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Contract("points do not tile into rows of the given dimension".into()));
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k = {k} must be between 1 and the {n} points")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("points must be finite".into()));
    }
    Ok(n)
}

/// Best of `opts.restarts` seeded Lloyd runs by objective; ties go to the
/// earliest restart.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, opts: &KMeansOptions) -> Result<Clustering> {
    validate(points, dim, k)?;
    let restarts = opts.restarts.max(1);
    let runs: Vec<LloydRun> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = prng(derive_seed(seed, &[r as u64]));
            let init = seed_centroids(points, dim, k, &mut rng);
            lloyd(points, dim, init, opts.max_iter)
        })
        .collect();
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ra, a), (rb, b)| a.objective.total_cmp(&b.objective).then(ra.cmp(rb)))
        .map(|(_, run)| run)
        .expect("at least one restart");
    Ok(Clustering {
        assignment: best.assignment,
        centroids: best.centroids,
        objective: best.objective,
        seed,
        attempts: restarts,
    })
}

/// How [`strata_with_all_arms`] reached arm coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StrataDiagnostics {
    pub reseeds: usize,
    pub fallback_merge: bool,
    pub merged_strata: usize,
}

fn covers_all_arms(assignment: &[usize], k: usize, arms: &[usize], n_arms: usize) -> Vec<bool> {
    let mut seen = vec![vec![false; n_arms]; k];
    for (&s, &a) in assignment.iter().zip(arms) {
        seen[s][a] = true;
    }
    seen.into_iter().map(|s| s.into_iter().all(|x| x)).collect()
}

/// K-means strata in which every stratum holds every arm.
///
/// Re-runs k-means with derived seeds up to `max_reseeds` times. If coverage
/// is never reached, strata missing an arm are merged into the stratum with
/// the nearest centroid until all strata cover every arm.
pub fn strata_with_all_arms(
    points: &[f64],
    dim: usize,
    k: usize,
    arms: &[usize],
    n_arms: usize,
    seed: u64,
    opts: &KMeansOptions,
    max_reseeds: usize,
) -> Result<(Clustering, StrataDiagnostics)> {
    let n = validate(points, dim, k)?;
    if arms.len() != n || arms.iter().any(|&a| a >= n_arms) {
        return Err(Error::Contract("arm labels do not match the points".into()));
    }
    let mut first = None;
    for attempt in 0..=max_reseeds {
        let s = if attempt == 0 { seed } else { derive_seed(seed, &[u64::MAX, attempt as u64]) };
        let mut c = kmeans(points, dim, k, s, opts)?;
        if covers_all_arms(&c.assignment, c.k(), arms, n_arms).iter().all(|&x| x) {
            c.attempts = attempt + 1;
            return Ok((c, StrataDiagnostics { reseeds: attempt, ..Default::default() }));
        }
        first.get_or_insert(c);
    }
    let mut c = first.expect("at least one attempt");
    let mut merged = 0;
    loop {
        let ok = covers_all_arms(&c.assignment, c.k(), arms, n_arms);
        let Some(bad) = ok.iter().position(|&x| !x) else { break };
        if c.k() == 1 {
            return Err(Error::Contract("an arm is absent from the data".into()));
        }
        let target = (0..c.k())
            .filter(|&s| s != bad)
            .min_by(|&a, &b| {
                sq_dist(&c.centroids[bad], &c.centroids[a])
                    .total_cmp(&sq_dist(&c.centroids[bad], &c.centroids[b]))
                    .then(a.cmp(&b))
            })
            .expect("k > 1");
        for s in c.assignment.iter_mut() {
            if *s == bad {
                *s = target;
            }
            if *s > bad {
                *s -= 1;
            }
        }
        let k_new = c.k() - 1;
        c.centroids = means(points, dim, &c.assignment, k_new);
        merged += 1;
    }
    c.objective = objective(points, dim, &c.assignment, &c.centroids);
    c.attempts = max_reseeds + 1;
    Ok((c, StrataDiagnostics { reseeds: max_reseeds, fallback_merge: true, merged_strata: merged }))
}
