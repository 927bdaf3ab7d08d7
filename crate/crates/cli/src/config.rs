//! The `simulate` config file: TOML with `[run]`, `[grid]` and an optional
//! `[subsample]` section. Every key has a default, so an empty file runs the
//! full three-arm grid.

use serde::{Deserialize, Serialize};
use vecmatch::designs::DesignTag;
use vecmatch::sim::{stratified_subsample, Dist, SimConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub run: RunSection,
    pub grid: GridSection,
    pub subsample: Option<SubsampleSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub reps: usize,
    pub designs: Vec<DesignTag>,
    pub k: usize,
    pub epsilon: f64,
    pub ridge: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            reps: 200,
            designs: vec![DesignTag::Vm, DesignTag::Crm, DesignTag::Ipw, DesignTag::Kmc],
            k: 5,
            epsilon: vecmatch::matcher::DEFAULT_EPSILON,
            ridge: vecmatch::gps::FitOptions::default().ridge,
        }
    }
}

/// Factor levels; the grid is their full cross product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// 3 or 5 arms.
    pub z: usize,
    /// Size of the first arm.
    pub n: Vec<usize>,
    pub gamma: Vec<usize>,
    pub dist: Vec<Dist>,
    /// Standardized bias with three arms, raw mean shift with five.
    pub bias: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub sigma3: Vec<f64>,
    pub p: Vec<usize>,
    /// Leave out the cells with six covariates and the smaller sample.
    pub exclude_small_p6: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            z: 3,
            n: vec![500, 1000],
            gamma: vec![1, 2],
            dist: vec![Dist::T7, Dist::Normal],
            bias: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            tau: vec![0.0, 0.25],
            sigma2: vec![0.5, 1.0, 2.0],
            sigma3: vec![0.5, 1.0, 2.0],
            p: vec![3, 6],
            exclude_small_p6: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSection {
    /// Configs drawn from each (bias, distribution) stratum.
    pub per_stratum: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SimulateConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Usage(format!("config: {m}")));
        if self.run.reps == 0 {
            return bad("run.reps must be positive");
        }
        if self.run.designs.is_empty() {
            return bad("run.designs is empty");
        }
        if self.run.designs.contains(&DesignTag::Sbc) {
            return bad("run.designs cannot include sbc");
        }
        if self.run.k == 0 || !(self.run.epsilon > 0.0) || !(self.run.ridge >= 0.0) {
            return bad("run.k and run.epsilon must be positive and run.ridge nonnegative");
        }
        let g = &self.grid;
        if g.z != 3 && g.z != 5 {
            return bad("grid.z must be 3 or 5");
        }
        if g.z == 5 && self.run.designs.contains(&DesignTag::Crm) {
            return bad("crm needs three arms; drop it from run.designs when grid.z = 5");
        }
        let empty = g.n.is_empty() || g.gamma.is_empty() || g.dist.is_empty() || g.bias.is_empty();
        let empty3 = g.tau.is_empty() || g.sigma2.is_empty() || g.sigma3.is_empty() || g.p.is_empty();
        if empty || (g.z == 3 && empty3) {
            return bad("every grid factor needs at least one level");
        }
        if self.subsample.as_ref().is_some_and(|s| s.per_stratum == 0) {
            return bad("subsample.per_stratum must be positive");
        }
        Ok(())
    }

    /// The configs to run, in grid order.
    pub fn configs(&self) -> Vec<SimConfig> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &n in &g.n {
            for &gamma in &g.gamma {
                for &dist in &g.dist {
                    for &bias in &g.bias {
                        if g.z == 5 {
                            out.push(SimConfig::z5(n, gamma, dist, bias));
                            continue;
                        }
                        for &tau in &g.tau {
                            for &s2 in &g.sigma2 {
                                for &s3 in &g.sigma3 {
                                    for &p in &g.p {
                                        if g.exclude_small_p6 && p == 6 && n == 500 {
                                            continue;
                                        }
                                        out.push(SimConfig::z3(n, gamma, dist, bias, tau, s2, s3, p));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        match &self.subsample {
            Some(s) => stratified_subsample(&out, s.per_stratum, s.seed),
            None => out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vecmatch::sim::{z3_grid, z5_grid};

    #[test]
    fn empty_file_is_the_full_three_arm_grid() {
        let cfg = SimulateConfig::parse("").unwrap();
        assert_eq!(cfg.run.reps, 200);
        assert_eq!(cfg.configs(), z3_grid(false));
    }

    #[test]
    fn five_arm_grid_matches_the_library() {
        let cfg = SimulateConfig::parse("[run]\ndesigns = [\"vm\", \"ipw\", \"kmc\"]\n[grid]\nz = 5\nn = [1000]\n").unwrap();
        assert_eq!(cfg.configs(), z5_grid());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(SimulateConfig::parse("[run]\nrepz = 3\n").is_err());
        assert!(SimulateConfig::parse("[grid]\nz = 4\n").is_err());
        assert!(SimulateConfig::parse("[grid]\nz = 5\n").is_err());
    }

    #[test]
    fn subsample_keeps_grid_order() {
        let text = "[grid]\nexclude_small_p6 = true\n[subsample]\nper_stratum = 12\nseed = 3\n";
        let configs = SimulateConfig::parse(text).unwrap().configs();
        assert_eq!(configs.len(), 120);
        let grid = z3_grid(true);
        let pos: Vec<usize> = configs.iter().map(|c| grid.iter().position(|g| g == c).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }
}
