//! Treatment-assignment models and the generalized propensity score.
//!
//! The multinomial logit pins the last model arm at zero; fitted probabilities
//! do not depend on which arm is pinned. Fitting maximizes the log-likelihood
//! minus `ridge / 2` times the squared slopes (intercepts are not penalized)
//! by Newton steps with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub ridge: f64,
    /// Convergence threshold on the max-norm of the penalized score.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { ridge: 1e-8, tol: 1e-8, max_iter: 100 }
    }
}

/// Fitted multinomial (or binary) logistic assignment model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsModel {
    /// Dataset arms in model order; the last one is pinned at zero.
    pub arms: Vec<usize>,
    /// `(arms.len() - 1) x (P + 1)`: intercept then slopes for each free arm.
    pub coefficients: Vec<Vec<f64>>,
    pub ridge: f64,
    pub converged: bool,
    pub iterations: usize,
    pub penalized_log_likelihood: f64,
    pub grad_norm: f64,
}

impl GpsModel {
    pub fn n_covariates(&self) -> usize {
        self.coefficients.first().map_or(0, |c| c.len() - 1)
    }

    /// Coefficients of model arm `k`, zeros for the pinned arm.
    pub fn block(&self, k: usize) -> Vec<f64> {
        self.coefficients
            .get(k)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_covariates() + 1])
    }

    /// Probabilities over the model arms for one covariate row.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let m = self.arms.len();
        let mut eta = vec![0.0; m];
        for (k, coef) in self.coefficients.iter().enumerate() {
            eta[k] = linear_predictor(coef, x);
        }
        softmax(&eta)
    }

    fn flat(&self) -> Vec<f64> {
        self.coefficients.iter().flatten().copied().collect()
    }
}

fn linear_predictor(coef: &[f64], x: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Softmax of linear predictors, computed stably.
pub fn softmax(eta: &[f64]) -> Vec<f64> {
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    (p / (1.0 - p)).ln()
}

/// N x Z matrix of estimated assignment probabilities and their logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsMatrix {
    n_arms: usize,
    probs: Vec<f64>,
    logits: Vec<f64>,
}

impl GpsMatrix {
    /// Validates and wraps row-major probabilities.
    pub fn from_probs(probs: Vec<f64>, n_arms: usize) -> Result<Self> {
        if n_arms < 2 || probs.len() % n_arms != 0 {
            return Err(Error::Contract("probability buffer does not tile into rows".into()));
        }
        for (i, row) in probs.chunks(n_arms).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-10 || row.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                return Err(Error::Contract(format!("row {i} is not a probability vector in (0,1)")));
            }
        }
        let logits = probs.iter().map(|&p| logit(p)).collect();
        Ok(Self { n_arms, probs, logits })
    }

    pub fn n_units(&self) -> usize {
        self.probs.len() / self.n_arms
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn prob(&self, i: usize, t: usize) -> f64 {
        self.probs[i * self.n_arms + t]
    }

    pub fn logit(&self, i: usize, t: usize) -> f64 {
        self.logits[i * self.n_arms + t]
    }

    pub fn prob_row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_arms..(i + 1) * self.n_arms]
    }

    pub fn logit_row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.n_arms..(i + 1) * self.n_arms]
    }

    /// Row-major logits of the chosen components, for clustering.
    pub fn logit_columns(&self, components: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_units() * components.len());
        for i in 0..self.n_units() {
            out.extend(components.iter().map(|&t| self.logit(i, t)));
        }
        out
    }

    /// Restriction to the given rows.
    pub fn subset(&self, units: &[usize]) -> GpsMatrix {
        let mut probs = Vec::with_capacity(units.len() * self.n_arms);
        let mut logits = Vec::with_capacity(units.len() * self.n_arms);
        for &i in units {
            probs.extend_from_slice(self.prob_row(i));
            logits.extend_from_slice(self.logit_row(i));
        }
        GpsMatrix { n_arms: self.n_arms, probs, logits }
    }
}

/// Units and arms over which a model is fitted.
struct Design<'a> {
    ds: &'a Dataset,
    units: Vec<usize>,
    /// model class of each unit in `units`
    class: Vec<usize>,
    n_classes: usize,
}

impl<'a> Design<'a> {
    fn new(ds: &'a Dataset, arms: &[usize], units: Option<&[usize]>) -> Result<Self> {
        let mut pos = vec![usize::MAX; ds.n_arms()];
        for (k, &t) in arms.iter().enumerate() {
            if t >= ds.n_arms() {
                return Err(Error::Contract(format!("arm {t} out of range")));
            }
            if pos[t] != usize::MAX {
                return Err(Error::Contract(format!("arm {t} listed twice")));
            }
            pos[t] = k;
        }
        let units: Vec<usize> = match units {
            Some(u) => u.to_vec(),
            None => (0..ds.n_units()).filter(|&i| pos[ds.arm(i)] != usize::MAX).collect(),
        };
        let class: Vec<usize> = units.iter().map(|&i| pos[ds.arm(i)]).collect();
        if class.contains(&usize::MAX) {
            return Err(Error::Contract("unit outside the modeled arms".into()));
        }
        let mut seen = vec![0usize; arms.len()];
        for &c in &class {
            seen[c] += 1;
        }
        if let Some(k) = seen.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!("arm {} has no units to fit", arms[k])));
        }
        Ok(Self { ds, units, class, n_classes: arms.len() })
    }

    fn n_params(&self) -> usize {
        (self.n_classes - 1) * (self.ds.n_covariates() + 1)
    }

    fn probs_for(&self, beta: &[f64], x: &[f64], eta: &mut [f64]) -> Vec<f64> {
        let q = self.ds.n_covariates() + 1;
        for k in 0..self.n_classes - 1 {
            eta[k] = linear_predictor(&beta[k * q..(k + 1) * q], x);
        }
        eta[self.n_classes - 1] = 0.0;
        softmax(eta)
    }

    fn penalty(&self, beta: &[f64], ridge: f64) -> f64 {
        let q = self.ds.n_covariates() + 1;
        let slopes: f64 = beta
            .chunks(q)
            .map(|b| b[1..].iter().map(|v| v * v).sum::<f64>())
            .sum();
        0.5 * ridge * slopes
    }

    fn objective(&self, beta: &[f64], ridge: f64) -> f64 {
        let mut eta = vec![0.0; self.n_classes];
        let q = self.ds.n_covariates() + 1;
        let mut ll = 0.0;
        for (&i, &c) in self.units.iter().zip(&self.class) {
            let x = self.ds.row(i);
            for k in 0..self.n_classes - 1 {
                eta[k] = linear_predictor(&beta[k * q..(k + 1) * q], x);
            }
            eta[self.n_classes - 1] = 0.0;
            let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + eta.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
            ll += eta[c] - lse;
        }
        ll - self.penalty(beta, ridge)
    }

    /// Penalized score and, optionally, the observed information matrix.
    fn derivatives(&self, beta: &[f64], ridge: f64, with_info: bool) -> (Vec<f64>, Option<DMatrix<f64>>) {
        let q = self.ds.n_covariates() + 1;
        let m = self.n_classes - 1;
        let n = self.n_params();
        let mut grad = vec![0.0; n];
        let mut info = with_info.then(|| DMatrix::<f64>::zeros(n, n));
        let mut eta = vec![0.0; self.n_classes];
        let mut xt = vec![1.0; q];
        for (&i, &c) in self.units.iter().zip(&self.class) {
            let x = self.ds.row(i);
            xt[1..].copy_from_slice(x);
            let p = self.probs_for(beta, x, &mut eta);
            for k in 0..m {
                let r = f64::from(u8::from(c == k)) - p[k];
                for a in 0..q {
                    grad[k * q + a] += r * xt[a];
                }
            }
            if let Some(info) = info.as_mut() {
                for k in 0..m {
                    for l in k..m {
                        let w = if k == l { p[k] * (1.0 - p[k]) } else { -p[k] * p[l] };
                        for a in 0..q {
                            let wa = w * xt[a];
                            for b in 0..q {
                                info[(k * q + a, l * q + b)] += wa * xt[b];
                            }
                        }
                    }
                }
            }
        }
        for k in 0..m {
            for a in 1..q {
                grad[k * q + a] -= ridge * beta[k * q + a];
            }
        }
        if let Some(info) = info.as_mut() {
            for k in 0..m {
                for l in k + 1..m {
                    for a in 0..q {
                        for b in 0..q {
                            info[(l * q + b, k * q + a)] = info[(k * q + a, l * q + b)];
                        }
                    }
                }
                for a in 1..q {
                    info[(k * q + a, k * q + a)] += ridge;
                }
            }
        }
        (grad, info)
    }

    fn initial(&self) -> Vec<f64> {
        let q = self.ds.n_covariates() + 1;
        let mut counts = vec![0.0f64; self.n_classes];
        for &c in &self.class {
            counts[c] += 1.0;
        }
        let last = counts[self.n_classes - 1];
        let mut beta = vec![0.0; self.n_params()];
        for k in 0..self.n_classes - 1 {
            beta[k * q] = (counts[k] / last).ln();
        }
        beta
    }

    fn fit(&self, arms: &[usize], opts: &FitOptions) -> Result<GpsModel> {
        if !(opts.ridge >= 0.0) || !opts.ridge.is_finite() {
            return Err(Error::Contract("ridge must be a nonnegative finite number".into()));
        }
        let mut beta = self.initial();
        let mut ll = self.objective(&beta, opts.ridge);
        let mut iterations = 0;
        let mut converged = false;
        let mut grad_norm;
        loop {
            let (grad, info) = self.derivatives(&beta, opts.ridge, true);
            grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if !grad_norm.is_finite() {
                return Err(Error::Numerical("non-finite score during fit".into()));
            }
            if grad_norm <= opts.tol {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            let info = info.expect("information requested");
            let chol = info.cholesky().ok_or_else(|| {
                Error::Numerical("information matrix is singular; covariates may be collinear".into())
            })?;
            let delta = chol.solve(&DVector::from_column_slice(&grad));
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
                let trial_ll = self.objective(&trial, opts.ridge);
                if trial_ll.is_finite() && trial_ll >= ll - 1e-12 * (1.0 + ll.abs()) {
                    beta = trial;
                    ll = trial_ll;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iterations += 1;
            if !accepted {
                // no ascent direction left at floating-point resolution
                break;
            }
        }
        if !converged && opts.ridge == 0.0 {
            return Err(Error::NonConvergence { iterations, grad_norm });
        }
        if !converged {
            log::warn!("assignment model not converged after {iterations} iterations (gradient {grad_norm:.3e})");
        }
        let q = self.ds.n_covariates() + 1;
        Ok(GpsModel {
            arms: arms.to_vec(),
            coefficients: beta.chunks(q).map(<[f64]>::to_vec).collect(),
            ridge: opts.ridge,
            converged,
            iterations,
            penalized_log_likelihood: ll,
            grad_norm,
        })
    }
}

/// Fits the multinomial logit over all units and arms; arm `Z - 1` is pinned.
pub fn fit_multinomial_logit(ds: &Dataset, opts: &FitOptions) -> Result<GpsModel> {
    let arms: Vec<usize> = (0..ds.n_arms()).collect();
    let params = (ds.n_arms() - 1) * (ds.n_covariates() + 1);
    if ds.n_units() <= params {
        return Err(Error::Validation(format!(
            "{} units cannot identify {params} assignment-model parameters",
            ds.n_units()
        )));
    }
    Design::new(ds, &arms, None)?.fit(&arms, opts)
}

/// Logistic propensity score on the two-arm subset; models `P(T = arms.0)`.
pub fn fit_binary_ps(ds: &Dataset, arms: (usize, usize), opts: &FitOptions) -> Result<GpsModel> {
    if arms.0 == arms.1 {
        return Err(Error::Contract("binary propensity score needs two distinct arms".into()));
    }
    let arms = [arms.0, arms.1];
    Design::new(ds, &arms, None)?.fit(&arms, opts)
}

/// GPS matrix for every unit of `ds` under a multinomial model over all arms.
pub fn predict_gps(model: &GpsModel, ds: &Dataset) -> Result<GpsMatrix> {
    let z = ds.n_arms();
    if model.arms.len() != z || model.arms.iter().enumerate().any(|(k, &t)| k != t) {
        return Err(Error::Contract(format!(
            "model covers arms {:?}, dataset has {z} arms",
            model.arms
        )));
    }
    if model.n_covariates() != ds.n_covariates() {
        return Err(Error::Contract(format!(
            "model has {} slopes, dataset has {} covariates",
            model.n_covariates(),
            ds.n_covariates()
        )));
    }
    let mut probs = Vec::with_capacity(ds.n_units() * z);
    for i in 0..ds.n_units() {
        probs.extend(
            model
                .probabilities(ds.row(i))
                .into_iter()
                .map(|p| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)),
        );
    }
    let logits = probs.iter().map(|&p| logit(p)).collect();
    Ok(GpsMatrix { n_arms: z, probs, logits })
}

/// Binary propensity scores `P(T = model.arms[0])` for the given units.
pub fn binary_scores(model: &GpsModel, ds: &Dataset, units: &[usize]) -> Result<Vec<f64>> {
    if model.arms.len() != 2 || model.n_covariates() != ds.n_covariates() {
        return Err(Error::Contract("expected a binary model matching the dataset".into()));
    }
    Ok(units
        .iter()
        .map(|&i| model.probabilities(ds.row(i))[0].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
        .collect())
}

/// Penalized log-likelihood of flattened coefficients over the units of `arms`.
///
/// Exposed so that fits can be checked against independent optimizers.
pub fn penalized_log_likelihood(ds: &Dataset, arms: &[usize], beta: &[f64], ridge: f64) -> Result<f64> {
    let design = Design::new(ds, arms, None)?;
    check_len(&design, beta)?;
    Ok(design.objective(beta, ridge))
}

/// Analytic penalized score at flattened coefficients.
pub fn penalized_score(ds: &Dataset, arms: &[usize], beta: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let design = Design::new(ds, arms, None)?;
    check_len(&design, beta)?;
    Ok(design.derivatives(beta, ridge, false).0)
}

fn check_len(design: &Design<'_>, beta: &[f64]) -> Result<()> {
    if beta.len() != design.n_params() {
        return Err(Error::Contract(format!(
            "expected {} coefficients, got {}",
            design.n_params(),
            beta.len()
        )));
    }
    Ok(())
}

/// Flattened coefficients in the layout used by [`penalized_log_likelihood`].
pub fn flat_coefficients(model: &GpsModel) -> Vec<f64> {
    model.flat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::prng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_dataset(n_per_arm: usize, z: usize, p: usize, shift: f64, seed: u64) -> Dataset {
        let mut rng = prng(seed);
        let mut cov = Vec::new();
        let mut treat = Vec::new();
        for t in 0..z {
            for _ in 0..n_per_arm {
                for j in 0..p {
                    let base: f64 = rng.sample(StandardNormal);
                    cov.push(base + if j % z == t { shift } else { 0.0 });
                }
                treat.push(t);
            }
        }
        Dataset::with_numbered_arms(cov, p, treat, z).unwrap()
    }

    /// Each arm holds the same covariate multiset.
    fn mirrored_dataset(z: usize) -> Dataset {
        let base = [-1.5, -0.4, 0.3, 0.9, 2.0, -0.7];
        let mut cov = Vec::new();
        let mut treat = Vec::new();
        for t in 0..z {
            for (k, &v) in base.iter().enumerate() {
                cov.push(v);
                cov.push(base[(k + 2) % base.len()] * 0.5);
                treat.push(t);
            }
        }
        Dataset::with_numbered_arms(cov, 2, treat, z).unwrap()
    }

    #[test]
    fn identical_arms_give_half() {
        let ds = mirrored_dataset(2);
        let model = fit_multinomial_logit(&ds, &FitOptions::default()).unwrap();
        assert!(model.converged);
        let gps = predict_gps(&model, &ds).unwrap();
        for i in 0..ds.n_units() {
            assert!((gps.prob(i, 0) - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_three_arms_give_thirds() {
        let ds = mirrored_dataset(3);
        let model = fit_multinomial_logit(&ds, &FitOptions::default()).unwrap();
        let gps = predict_gps(&model, &ds).unwrap();
        for i in 0..ds.n_units() {
            for t in 0..3 {
                assert!((gps.prob(i, t) - 1.0 / 3.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_coefficients_predict_uniform() {
        let ds = random_dataset(4, 4, 2, 1.0, 3);
        let model = GpsModel {
            arms: vec![0, 1, 2, 3],
            coefficients: vec![vec![0.0; 3]; 3],
            ridge: 0.0,
            converged: true,
            iterations: 0,
            penalized_log_likelihood: 0.0,
            grad_norm: 0.0,
        };
        let gps = predict_gps(&model, &ds).unwrap();
        for i in 0..ds.n_units() {
            for t in 0..4 {
                assert!((gps.prob(i, t) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[0.0, 2f64.ln(), 3f64.ln()]);
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn logits_of_example_vector() {
        let gps = GpsMatrix::from_probs(vec![0.30, 0.60, 0.10], 3).unwrap();
        let want = [(3.0f64 / 7.0).ln(), 1.5f64.ln(), (1.0f64 / 9.0).ln()];
        for t in 0..3 {
            assert!((gps.logit(0, t) - want[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let ds = random_dataset(40, 4, 3, 1.0, 9);
        let model = fit_multinomial_logit(&ds, &FitOptions::default()).unwrap();
        assert!(model.converged);
        let gps = predict_gps(&model, &ds).unwrap();
        for i in 0..ds.n_units() {
            let s: f64 = gps.prob_row(i).iter().sum();
            assert!((s - 1.0).abs() <= 1e-10);
            for t in 0..4 {
                let p = gps.prob(i, t);
                assert!(p > 0.0 && p < 1.0);
                assert!((gps.logit(i, t) - (p / (1.0 - p)).ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn converged_fit_satisfies_gradient_criterion() {
        let ds = random_dataset(30, 3, 2, 0.8, 21);
        let opts = FitOptions::default();
        let model = fit_multinomial_logit(&ds, &opts).unwrap();
        let g = penalized_score(&ds, &[0, 1, 2], &flat_coefficients(&model), opts.ridge).unwrap();
        assert!(g.iter().all(|v| v.abs() <= opts.tol));
    }

    #[test]
    fn score_matches_central_differences() {
        let ds = random_dataset(15, 3, 2, 0.8, 5);
        let arms = [0, 1, 2];
        let mut rng = prng(77);
        for _ in 0..10 {
            let beta: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
            let ridge = 0.3;
            let g = penalized_score(&ds, &arms, &beta, ridge).unwrap();
            for j in 0..beta.len() {
                let h = 1e-5;
                let mut up = beta.clone();
                up[j] += h;
                let mut dn = beta.clone();
                dn[j] -= h;
                let fd = (penalized_log_likelihood(&ds, &arms, &up, ridge).unwrap()
                    - penalized_log_likelihood(&ds, &arms, &dn, ridge).unwrap())
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn separated_data_without_ridge_fails_to_converge() {
        let cov = vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let ds = Dataset::with_numbered_arms(cov, 1, vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        let opts = FitOptions { ridge: 0.0, tol: 1e-8, max_iter: 8 };
        let r = fit_multinomial_logit(&ds, &opts);
        assert!(matches!(r, Err(Error::NonConvergence { .. })), "{r:?}");
        let ridged = FitOptions { ridge: 1.0, ..opts };
        assert!(fit_multinomial_logit(&ds, &ridged).unwrap().converged);
    }

    #[test]
    fn collinear_covariates_without_ridge_are_singular() {
        let mut rng = prng(1);
        let mut cov = Vec::new();
        let mut treat = Vec::new();
        for i in 0..30 {
            let v: f64 = rng.sample(StandardNormal);
            cov.extend([v, 2.0 * v]);
            treat.push(i % 3);
        }
        let ds = Dataset::with_numbered_arms(cov, 2, treat, 3).unwrap();
        let opts = FitOptions { ridge: 0.0, ..FitOptions::default() };
        assert!(matches!(fit_multinomial_logit(&ds, &opts), Err(Error::Numerical(_))));
        assert!(fit_multinomial_logit(&ds, &FitOptions { ridge: 1e-3, ..opts }).is_ok());
    }

    #[test]
    fn binary_ps_rejects_repeated_arm() {
        let ds = random_dataset(5, 3, 1, 0.0, 1);
        assert!(matches!(
            fit_binary_ps(&ds, (1, 1), &FitOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn binary_ps_on_symmetric_arms_is_half() {
        let ds = mirrored_dataset(3);
        let model = fit_binary_ps(&ds, (0, 2), &FitOptions::default()).unwrap();
        let units: Vec<usize> = (0..ds.n_units()).collect();
        for e in binary_scores(&model, &ds, &units).unwrap() {
            assert!((e - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn binary_fit_ignores_third_arm() {
        let ds = random_dataset(20, 3, 2, 1.0, 8);
        let model = fit_binary_ps(&ds, (0, 1), &FitOptions::default()).unwrap();
        let two_arm: Vec<usize> = (0..ds.n_units()).filter(|&i| ds.arm(i) < 2).collect();
        let mut cov = Vec::new();
        for &i in &two_arm {
            cov.extend_from_slice(ds.row(i));
        }
        let treat = two_arm.iter().map(|&i| ds.arm(i)).collect();
        let ds2 = Dataset::with_numbered_arms(cov, 2, treat, 2).unwrap();
        let direct = fit_multinomial_logit(&ds2, &FitOptions::default()).unwrap();
        for (a, b) in model.flat().iter().zip(direct.flat()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn fitted_probabilities_are_affine_invariant(
            seed in 0u64..10_000,
            scale in proptest::prop_oneof![-3.0f64..-0.3, 0.3f64..3.0],
            offset in -5.0f64..5.0,
            col in 0usize..2,
        ) {
            let ds = random_dataset(25, 3, 2, 0.7, seed);
            let mut cov = Vec::new();
            for i in 0..ds.n_units() {
                let mut row = ds.row(i).to_vec();
                row[col] = scale * row[col] + offset;
                cov.extend(row);
            }
            let moved = Dataset::with_numbered_arms(cov, 2, ds.treatment().to_vec(), 3).unwrap();
            // no ridge so the optimum is exactly equivariant
            let opts = FitOptions { ridge: 0.0, tol: 1e-9, max_iter: 100 };
            let a = predict_gps(&fit_multinomial_logit(&ds, &opts).unwrap(), &ds).unwrap();
            let b = predict_gps(&fit_multinomial_logit(&moved, &opts).unwrap(), &moved).unwrap();
            for i in 0..ds.n_units() {
                for t in 0..3 {
                    proptest::prop_assert!((a.prob(i, t) - b.prob(i, t)).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn duplicating_units_in_every_arm_keeps_symmetric_fit_symmetric(k in 0usize..6) {
            let ds = mirrored_dataset(3);
            let mut cov = Vec::new();
            let mut treat = Vec::new();
            for i in 0..ds.n_units() {
                cov.extend_from_slice(ds.row(i));
                treat.push(ds.arm(i));
            }
            for t in 0..3 {
                let i = t * 6 + k;
                cov.extend_from_slice(ds.row(i));
                treat.push(t);
            }
            let dup = Dataset::with_numbered_arms(cov, 2, treat, 3).unwrap();
            let gps = predict_gps(&fit_multinomial_logit(&dup, &FitOptions::default()).unwrap(), &dup).unwrap();
            for i in 0..dup.n_units() {
                for t in 0..3 {
                    proptest::prop_assert!((gps.prob(i, t) - 1.0 / 3.0).abs() < 1e-8);
                }
            }
        }
    }
}
