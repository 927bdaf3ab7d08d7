//! Slow, obviously-correct reference implementations used to check the
//! optimized library code. Nothing here shares code with `vecmatch`.

/// Nelder-Mead minimizer with restarts from the best vertex.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let mut best = x0.to_vec();
    let mut best_f = f(&best);
    let mut evals = 1;
    let mut scale = step;
    for _ in 0..12 {
        let (x, fx, used) = simplex_run(f, &best, scale, max_evals.saturating_sub(evals));
        evals += used;
        let improved = best_f - fx;
        if fx < best_f {
            best = x;
            best_f = fx;
        }
        if improved.abs() < 1e-14 * (1.0 + best_f.abs()) || evals >= max_evals {
            break;
        }
        scale = (scale * 0.5).max(1e-3);
    }
    (best, best_f)
}

fn simplex_run(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, budget: usize) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut used = n + 1;
    while used < budget {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        let size = pts.iter().skip(1).map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
        if spread.abs() < 1e-15 * (1.0 + vals[0].abs()) && size < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        used += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            used += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            used += 1;
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = (0..n).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
                    vals[i] = f(&pts[i]);
                }
                used += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
    (pts[best].clone(), vals[best], used)
}

/// Penalized multinomial log-likelihood with the last arm as baseline.
///
/// `beta` holds, for each non-baseline arm, an intercept followed by one
/// slope per covariate. Only slopes are penalized, by `ridge / 2` times their
/// squared norm.
pub fn multinomial_loglik(x: &[Vec<f64>], arm: &[usize], z: usize, beta: &[f64], ridge: f64) -> f64 {
    let p = x[0].len();
    let block = p + 1;
    let mut ll = 0.0;
    for (row, &t) in x.iter().zip(arm) {
        let mut eta = vec![0.0; z];
        for k in 0..z - 1 {
            eta[k] = beta[k * block] + (0..p).map(|j| beta[k * block + 1 + j] * row[j]).sum::<f64>();
        }
        let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + eta.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
        ll += eta[t] - lse;
    }
    let mut pen = 0.0;
    for k in 0..z - 1 {
        for j in 0..p {
            pen += beta[k * block + 1 + j].powi(2);
        }
    }
    ll - 0.5 * ridge * pen
}

/// Assignment probabilities of one row under [`multinomial_loglik`]'s layout.
pub fn multinomial_probs(row: &[f64], z: usize, beta: &[f64]) -> Vec<f64> {
    let p = row.len();
    let mut eta = vec![0.0; z];
    for k in 0..z - 1 {
        eta[k] = beta[k * (p + 1)] + (0..p).map(|j| beta[k * (p + 1) + 1 + j] * row[j]).sum::<f64>();
    }
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Minimum within-cluster sum of squares over every partition of the points
/// into exactly `k` non-empty groups, with one optimal labeling.
pub fn kmeans_exhaustive(points: &[Vec<f64>], k: usize) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = (f64::INFINITY, labels.clone());
    loop {
        // restricted growth strings enumerate each partition once
        if valid_rgs(&labels, k) {
            let sse = partition_sse(points, &labels, k);
            if sse < best.0 {
                best = (sse, labels.clone());
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if labels[i] + 1 < k {
                labels[i] += 1;
                for l in labels.iter_mut().skip(i + 1) {
                    *l = 0;
                }
                break;
            }
        }
    }
}

fn valid_rgs(labels: &[usize], k: usize) -> bool {
    let mut max_seen = 0;
    for (i, &l) in labels.iter().enumerate() {
        if i == 0 && l != 0 {
            return false;
        }
        if l > max_seen + 1 {
            return false;
        }
        max_seen = max_seen.max(l);
    }
    max_seen + 1 == k
}

pub fn partition_sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        for j in 0..d {
            let mean = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
            total += members.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>();
        }
    }
    total
}

/// For every reference score, the nearest candidate (smallest index on ties)
/// if it lies within the caliper.
pub fn nearest_neighbour_brute(refs: &[f64], cands: &[f64], caliper: f64) -> Vec<Option<(usize, f64)>> {
    refs.iter()
        .map(|&r| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &c) in cands.iter().enumerate() {
                let d = (r - c).abs();
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            best.filter(|&(_, d)| d <= caliper)
        })
        .collect()
}

/// Greedy matching without replacement: references by descending score
/// (lower index first on ties) take the closest unused candidate (lower index
/// first on ties) within the caliper. Returns `(reference, candidate)` pairs
/// sorted by reference.
pub fn greedy_brute(refs: &[f64], cands: &[f64], caliper: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..refs.len()).collect();
    order.sort_by(|&a, &b| refs[b].partial_cmp(&refs[a]).unwrap().then(a.cmp(&b)));
    let mut used = vec![false; cands.len()];
    let mut out = Vec::new();
    for r in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, &c) in cands.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (refs[r] - c).abs();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, d)) = best {
            if d <= caliper {
                used[j] = true;
                out.push((r, j));
            }
        }
    }
    out.sort();
    out
}

fn ranks(row: &[f64]) -> Vec<f64> {
    row.iter()
        .map(|&v| {
            let below = row.iter().filter(|&&w| w < v).count() as f64;
            let equal = row.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Tie-corrected Friedman statistic computed directly from its definition.
pub fn friedman_statistic(m: &[Vec<f64>]) -> f64 {
    let b = m.len() as f64;
    let k = m[0].len() as f64;
    let r: Vec<Vec<f64>> = m.iter().map(|row| ranks(row)).collect();
    let a1: f64 = r.iter().flatten().map(|v| v * v).sum();
    let c1 = b * k * (k + 1.0).powi(2) / 4.0;
    let mut num = 0.0;
    for j in 0..m[0].len() {
        let rj: f64 = r.iter().map(|row| row[j]).sum();
        num += (rj - b * (k + 1.0) / 2.0).powi(2);
    }
    if (a1 - c1).abs() < 1e-12 {
        0.0
    } else {
        (k - 1.0) * num / (a1 - c1)
    }
}

/// Quade statistic from its definition; infinite when the denominator is zero.
pub fn quade_statistic(m: &[Vec<f64>]) -> f64 {
    let b = m.len() as f64;
    let k = m[0].len();
    let ranges: Vec<f64> = m
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - row.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    let q = ranks(&ranges);
    let s: Vec<Vec<f64>> = m
        .iter()
        .zip(&q)
        .map(|(row, &qi)| ranks(row).into_iter().map(|r| qi * (r - (k as f64 + 1.0) / 2.0)).collect())
        .collect();
    let a2: f64 = s.iter().flatten().map(|v| v * v).sum();
    let bb: f64 = (0..k).map(|j| s.iter().map(|r| r[j]).sum::<f64>().powi(2)).sum::<f64>() / b;
    if (a2 - bb).abs() < 1e-9 {
        f64::INFINITY
    } else {
        (b - 1.0) * bb / (a2 - bb)
    }
}

fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in all_permutations(k - 1) {
        for pos in 0..k {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Fraction of the `(k!)^b` within-row relabelings whose statistic is at
/// least the observed one.
pub fn permutation_p_value(m: &[Vec<f64>], statistic: &dyn Fn(&[Vec<f64>]) -> f64) -> f64 {
    let observed = statistic(m);
    let k = m[0].len();
    let perms = all_permutations(k);
    let b = m.len();
    let mut idx = vec![0usize; b];
    let (mut hit, mut total) = (0u64, 0u64);
    loop {
        let shuffled: Vec<Vec<f64>> =
            m.iter().zip(&idx).map(|(row, &pi)| perms[pi].iter().map(|&j| row[j]).collect()).collect();
        let s = statistic(&shuffled);
        let ge = if observed.is_infinite() { s.is_infinite() } else { s >= observed - 1e-9 * (1.0 + observed.abs()) };
        if ge {
            hit += 1;
        }
        total += 1;
        let mut i = 0;
        loop {
            if i == b {
                return hit as f64 / total as f64;
            }
            idx[i] += 1;
            if idx[i] < perms.len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// SATT of `sets[.][0]` (reference) against each other column, straight from
/// the set list: mean over sets of the outcome difference.
pub fn satt_from_sets(sets: &[Vec<usize>], y: &[f64]) -> Vec<f64> {
    let k = sets[0].len();
    (1..k)
        .map(|j| sets.iter().map(|s| y[s[0]] - y[s[j]]).sum::<f64>() / sets.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let (x, fx) = nelder_mead(&f, &[0.0, 0.0], 0.5, 20_000);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] + 2.0).abs() < 1e-6 && fx < 1e-10);
    }

    #[test]
    fn exhaustive_kmeans_small() {
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
        let (sse, labels) = kmeans_exhaustive(&pts, 2);
        assert!((sse - 1.0).abs() < 1e-12);
        assert_eq!(labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(all_permutations(3).len(), 6);
        let m = vec![vec![1.0, 2.0, 3.0]; 2];
        assert!((permutation_p_value(&m, &friedman_statistic) - 6.0 / 36.0).abs() < 1e-12);
    }
}
