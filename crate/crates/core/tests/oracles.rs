use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use vecmatch::cluster::{kmeans, KMeansOptions};
use vecmatch::data::Dataset;
use vecmatch::designs::{DesignTag, MatchedCohort};
use vecmatch::gps::{fit_multinomial_logit, flat_coefficients, predict_gps, FitOptions};
use vecmatch::inference::{friedman_test, quade_test, satt_estimates, matched_outcome_means};
use vecmatch::matcher::{caliper_nn_with_replacement, caliper_nn_without_replacement, GreedyOrder};
use vecmatch::rng::prng;
use vecmatch_testkit as tk;

fn random_dataset(seed: u64, n: usize, p: usize, z: usize) -> Dataset {
    let mut rng = prng(seed);
    let mut x = Vec::with_capacity(n * p);
    let mut arms = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        // overlapping arms whose odds depend on the first covariate
        let shift = (row[0] * 0.8).tanh();
        let u: f64 = rng.random::<f64>() + 0.3 * shift;
        let t = if i < z { i } else { ((u.clamp(0.0, 0.999)) * z as f64) as usize };
        x.extend(row);
        arms.push(t);
    }
    Dataset::with_numbered_arms(x, p, arms, z).unwrap()
}

#[test]
fn multinomial_fit_agrees_with_derivative_free_maximizer() {
    for inst in 0..20u64 {
        let z = 3 + (inst % 2) as usize;
        let p = 1 + (inst % 3) as usize;
        let ds = random_dataset(100 + inst, 60, p, z);
        let opts = FitOptions::default();
        let model = fit_multinomial_logit(&ds, &opts).unwrap();
        let beta = flat_coefficients(&model);
        let rows: Vec<Vec<f64>> = (0..ds.n_units()).map(|i| ds.row(i).to_vec()).collect();
        let neg = |b: &[f64]| -tk::multinomial_loglik(&rows, ds.treatment(), z, b, opts.ridge);
        let (nm, _) = tk::nelder_mead(&neg, &vec![0.0; beta.len()], 0.5, 200_000);
        let (nm, _) = tk::nelder_mead(&neg, &nm, 0.05, 200_000);
        for (a, b) in beta.iter().zip(&nm) {
            assert!((a - b).abs() < 1e-4, "instance {inst}: {beta:?} vs {nm:?}");
        }
        let gps = predict_gps(&model, &ds).unwrap();
        for i in 0..ds.n_units() {
            let oracle = tk::multinomial_probs(ds.row(i), z, &nm);
            for t in 0..z {
                assert!((gps.prob(i, t) - oracle[t]).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn gps_rows_sum_to_one() {
    for inst in 0..10u64 {
        let ds = random_dataset(500 + inst, 200, 3, 3 + (inst % 3) as usize);
        let gps = predict_gps(&fit_multinomial_logit(&ds, &FitOptions::default()).unwrap(), &ds).unwrap();
        for i in 0..gps.n_units() {
            assert!((gps.prob_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn kmeans_reaches_the_exhaustive_optimum() {
    let mut rng = prng(9);
    for inst in 0..30u64 {
        let n = 4 + (inst % 7) as usize;
        let k = 1 + (inst % 3) as usize;
        let dim = 1 + (inst % 2) as usize;
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let (best, _) = tk::kmeans_exhaustive(&points, k);
        let c = kmeans(&flat, dim, k, inst, &KMeansOptions::default()).unwrap();
        let sse = tk::partition_sse(&points, &c.assignment, k);
        assert!((sse - best).abs() <= 1e-9 * (1.0 + best), "instance {inst}: {sse} vs {best}");
    }
}

#[test]
fn with_replacement_matches_brute_force() {
    let mut rng = prng(21);
    for _ in 0..100 {
        let nr = rng.random_range(1..30);
        let nc = rng.random_range(1..30);
        // coarse grid so exact ties occur
        let refs: Vec<f64> = (0..nr).map(|_| rng.random_range(0..40) as f64 * 0.05).collect();
        let cands: Vec<f64> = (0..nc).map(|_| rng.random_range(0..40) as f64 * 0.05).collect();
        let caliper = rng.random_range(0.0..0.3);
        let got = caliper_nn_with_replacement(&refs, &cands, caliper).unwrap();
        let want = tk::nearest_neighbour_brute(&refs, &cands, caliper);
        let mut got_iter = got.iter().peekable();
        for (r, w) in want.iter().enumerate() {
            match w {
                Some((j, d)) => {
                    let m = got_iter.next().expect("missing match");
                    assert_eq!((m.reference_unit, m.matched_unit), (r, *j));
                    assert!((m.distance - d).abs() < 1e-12);
                }
                None => assert!(got_iter.peek().map_or(true, |m| m.reference_unit != r)),
            }
        }
        assert!(got_iter.next().is_none());
    }
}

#[test]
fn greedy_matches_independent_reimplementation() {
    let mut rng = prng(33);
    for _ in 0..100 {
        let nr = rng.random_range(1..12);
        let nc = rng.random_range(1..12);
        let refs: Vec<f64> = (0..nr).map(|_| rng.random_range(0..20) as f64 * 0.1).collect();
        let cands: Vec<f64> = (0..nc).map(|_| rng.random_range(0..20) as f64 * 0.1).collect();
        let caliper = rng.random_range(0.0..0.5);
        let mut got: Vec<(usize, usize)> =
            caliper_nn_without_replacement(&refs, &cands, caliper, GreedyOrder::DescendingScore)
                .unwrap()
                .into_iter()
                .map(|m| (m.reference_unit, m.matched_unit))
                .collect();
        got.sort();
        assert_eq!(got, tk::greedy_brute(&refs, &cands, caliper));
    }
}

#[test]
fn exact_p_values_match_enumeration() {
    let mut rng = prng(77);
    for inst in 0..40 {
        let b = 2 + inst % 4;
        let m: Vec<Vec<f64>> = (0..b).map(|_| (0..3).map(|_| rng.random_range(0..4) as f64).collect()).collect();
        let f = friedman_test(&m, 8).unwrap();
        let q = quade_test(&m, 8).unwrap();
        let pf = tk::permutation_p_value(&m, &tk::friedman_statistic);
        let pq = tk::permutation_p_value(&m, &tk::quade_statistic);
        assert!((f.p_value_exact.unwrap() - pf).abs() < 1e-12, "{m:?}");
        assert!((q.p_value_exact.unwrap() - pq).abs() < 1e-12, "{m:?}");
        assert!((f.statistic - tk::friedman_statistic(&m)).abs() < 1e-9);
    }
}

#[test]
fn satt_transitivity_holds_exactly() {
    let mut rng = prng(5);
    for _ in 0..25 {
        let per_arm = rng.random_range(3..10);
        let n = per_arm * 3;
        let arms: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ds = Dataset::with_numbered_arms(vec![0.0; n], 1, arms, 3).unwrap().with_outcome(y.clone()).unwrap();
        let refs: Vec<usize> = (0..n).filter(|i| i % 3 == 0).collect();
        let sets: Vec<Vec<usize>> = refs
            .iter()
            .map(|&r| vec![r, 3 * rng.random_range(0..per_arm) + 1, 3 * rng.random_range(0..per_arm) + 2])
            .collect();
        let cohort = MatchedCohort::from_sets(DesignTag::Vm, 0, vec![0, 1, 2], sets.clone(), n).unwrap();
        let est = satt_estimates(&cohort, &ds).unwrap();
        let means = matched_outcome_means(&cohort, &ds).unwrap();
        let (s12, s13) = (est.get(1).unwrap(), est.get(2).unwrap());
        assert!((s12 - s13 - (means[2] - means[1])).abs() < 1e-12);
        let oracle = tk::satt_from_sets(&sets, &y);
        assert!((s12 - oracle[0]).abs() < 1e-12 && (s13 - oracle[1]).abs() < 1e-12);
    }
}
