//! Covariate distributions for the three- and five-arm studies and the
//! two-covariate interlude.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::{prng, Prng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    Normal,
    T7,
}

impl Dist {
    pub fn name(self) -> &'static str {
        match self {
            Dist::Normal => "normal",
            Dist::T7 => "t7",
        }
    }
}

impl std::str::FromStr for Dist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(Dist::Normal),
            "t7" => Ok(Dist::T7),
            other => Err(Error::Validation(format!("unknown distribution '{other}'"))),
        }
    }
}

/// One cell of the factorial design.
///
/// For `z = 5` the covariates are five-dimensional with identity covariance,
/// `bias` is the raw mean shift `b`, and `tau`, the variances and `p` are
/// ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub z: usize,
    pub n_t1: usize,
    pub gamma: usize,
    pub dist: Dist,
    /// Standardized bias `B` (three arms) or mean shift `b` (five arms).
    pub bias: f64,
    pub tau: f64,
    pub sigma2_sq: f64,
    pub sigma3_sq: f64,
    pub p: usize,
}

impl SimConfig {
    pub fn z3(n_t1: usize, gamma: usize, dist: Dist, bias: f64, tau: f64, sigma2_sq: f64, sigma3_sq: f64, p: usize) -> Self {
        Self { z: 3, n_t1, gamma, dist, bias, tau, sigma2_sq, sigma3_sq, p }
    }

    pub fn z5(n_t1: usize, gamma: usize, dist: Dist, b: f64) -> Self {
        Self { z: 5, n_t1, gamma, dist, bias: b, tau: 0.0, sigma2_sq: 1.0, sigma3_sq: 1.0, p: 5 }
    }

    /// Stable identifier used to derive replication seeds.
    pub fn key(&self) -> String {
        format!(
            "z{}-n{}-g{}-{}-B{}-tau{}-s2{}-s3{}-p{}",
            self.z,
            self.n_t1,
            self.gamma,
            self.dist.name(),
            self.bias,
            self.tau,
            self.sigma2_sq,
            self.sigma3_sq,
            self.p
        )
    }

    pub fn arm_sizes(&self) -> Vec<usize> {
        let (n, g) = (self.n_t1, self.gamma);
        match self.z {
            5 => vec![n, g * n, g * n, g * g * n, g * g * n],
            _ => vec![n, g * n, g * g * n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.z {
            3 => self.p >= 1 && self.sigma2_sq > 0.0 && self.sigma3_sq > 0.0 && self.tau.is_finite(),
            5 => self.p == 5,
            _ => false,
        };
        if !ok || self.n_t1 == 0 || self.gamma == 0 || !self.bias.is_finite() {
            return Err(Error::Validation(format!("invalid simulation config {}", self.key())));
        }
        Ok(())
    }
}

/// Raw mean shift `b` for a standardized bias `B`.
pub fn b_from_bias(bias: f64, sigma2_sq: f64, sigma3_sq: f64) -> f64 {
    bias * ((1.0 + sigma2_sq + sigma3_sq) / 3.0).sqrt()
}

/// Symmetric square root `V diag(sqrt(lambda)) V^T` of a covariance matrix.
pub fn symmetric_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Numerical("covariance matrix is not positive definite".into()));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// Equicorrelated matrix with `diag` on the diagonal and `off` elsewhere.
pub fn compound_symmetric(p: usize, diag: f64, off: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { diag } else { off })
}

struct Arm {
    n: usize,
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

fn draw(arms: &[Arm], dist: Dist, rng: &mut Prng) -> Result<Dataset> {
    let p = arms[0].mean.len();
    let chi = ChiSquared::new(7.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let total: usize = arms.iter().map(|a| a.n).sum();
    let mut cov = Vec::with_capacity(total * p);
    let mut treat = Vec::with_capacity(total);
    for (t, arm) in arms.iter().enumerate() {
        for _ in 0..arm.n {
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut x = &arm.root * z;
            if dist == Dist::T7 {
                let w: f64 = chi.sample(rng);
                x /= (w / 7.0).sqrt();
            }
            x += &arm.mean;
            cov.extend(x.iter());
            treat.push(t);
        }
    }
    Dataset::with_numbered_arms(cov, p, treat, arms.len())
}

/// Three arms of sizes `(n, gamma n, gamma^2 n)`. Arm `t` has mean `b` on
/// covariates `p` with `p mod 3 == t` and zero elsewhere; its scale matrix has
/// diagonal `1`, `sigma2_sq` or `sigma3_sq` and off-diagonal `tau`.
pub fn generate_z3(cfg: &SimConfig, rep_seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.z != 3 {
        return Err(Error::Contract("generate_z3 needs a three-arm config".into()));
    }
    let b = b_from_bias(cfg.bias, cfg.sigma2_sq, cfg.sigma3_sq);
    let sizes = cfg.arm_sizes();
    let diag = [1.0, cfg.sigma2_sq, cfg.sigma3_sq];
    let arms = (0..3)
        .map(|t| {
            Ok(Arm {
                n: sizes[t],
                mean: DVector::from_fn(cfg.p, |j, _| if j % 3 == t { b } else { 0.0 }),
                root: symmetric_sqrt(&compound_symmetric(cfg.p, diag[t], cfg.tau))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    draw(&arms, cfg.dist, &mut prng(rep_seed))
}

/// Five arms of sizes `(n, gn, gn, g^2 n, g^2 n)`, mean `b e_t`, identity scale.
pub fn generate_z5(cfg: &SimConfig, rep_seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.z != 5 {
        return Err(Error::Contract("generate_z5 needs a five-arm config".into()));
    }
    let arms = cfg
        .arm_sizes()
        .into_iter()
        .enumerate()
        .map(|(t, n)| Arm {
            n,
            mean: DVector::from_fn(5, |j, _| if j == t { cfg.bias } else { 0.0 }),
            root: DMatrix::identity(5, 5),
        })
        .collect::<Vec<_>>();
    draw(&arms, cfg.dist, &mut prng(rep_seed))
}

pub fn generate(cfg: &SimConfig, rep_seed: u64) -> Result<Dataset> {
    match cfg.z {
        5 => generate_z5(cfg, rep_seed),
        _ => generate_z3(cfg, rep_seed),
    }
}

/// Two standard-normal covariates with arm means `(0,0)`, `(a,0)`, `(0,a)`.
pub fn generate_interlude(a: f64, sizes: [usize; 3], rep_seed: u64) -> Result<Dataset> {
    let means = [[0.0, 0.0], [a, 0.0], [0.0, a]];
    let arms: Vec<Arm> = (0..3)
        .map(|t| Arm { n: sizes[t], mean: DVector::from_row_slice(&means[t]), root: DMatrix::identity(2, 2) })
        .collect();
    draw(&arms, Dist::Normal, &mut prng(rep_seed))
}
