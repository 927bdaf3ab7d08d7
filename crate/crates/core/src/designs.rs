//! Study designs built on a (usually trimmed) dataset and its GPS: vector
//! matching, common-referent matching, pairwise binary comparisons, k-means
//! subclassification and inverse probability weights.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, strata_with_all_arms, KMeansOptions, StrataDiagnostics};
use crate::data::Dataset;
use crate::gps::{binary_scores, fit_binary_ps, logit, FitOptions, GpsMatrix};
use crate::matcher::{
    caliper_from_sd, caliper_nn_with_replacement, caliper_nn_without_replacement, GreedyOrder, DEFAULT_EPSILON,
};
use crate::rng::derive_seed;
use crate::support::{pairwise_support, CommonSupport};
use crate::{Error, Result};

/// Weights above this are reported as extreme.
pub const EXTREME_WEIGHT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignTag {
    Vm,
    Crm,
    Sbc,
    Kmc,
    Ipw,
}

impl DesignTag {
    pub fn name(self) -> &'static str {
        match self {
            DesignTag::Vm => "vm",
            DesignTag::Crm => "crm",
            DesignTag::Sbc => "sbc",
            DesignTag::Kmc => "kmc",
            DesignTag::Ipw => "ipw",
        }
    }
}

impl std::fmt::Display for DesignTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DesignTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vm" => Ok(DesignTag::Vm),
            "crm" => Ok(DesignTag::Crm),
            "sbc" => Ok(DesignTag::Sbc),
            "kmc" => Ok(DesignTag::Kmc),
            "ipw" => Ok(DesignTag::Ipw),
            other => Err(Error::Validation(format!("unknown design '{other}'"))),
        }
    }
}

/// Matched sets with one unit per arm of `arms` and multiplicities `psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedCohort {
    pub design: DesignTag,
    pub reference: usize,
    /// Arm of each position within a set; contains `reference`.
    pub arms: Vec<usize>,
    /// `sets[s][j]` is the unit matched for `arms[j]`.
    pub sets: Vec<Vec<usize>>,
    /// Number of sets containing each unit of the dataset.
    pub psi: Vec<usize>,
}

impl MatchedCohort {
    /// Builds a cohort and derives `psi` from the sets.
    pub fn from_sets(
        design: DesignTag,
        reference: usize,
        arms: Vec<usize>,
        sets: Vec<Vec<usize>>,
        n_units: usize,
    ) -> Result<Self> {
        if !arms.contains(&reference) {
            return Err(Error::Contract("cohort arms must include the reference".into()));
        }
        let mut psi = vec![0usize; n_units];
        for set in &sets {
            if set.len() != arms.len() {
                return Err(Error::Contract("matched set size differs from the arm count".into()));
            }
            for &u in set {
                if u >= n_units {
                    return Err(Error::Contract(format!("unit {u} is outside the dataset")));
                }
                psi[u] += 1;
            }
        }
        Ok(Self { design, reference, arms, sets, psi })
    }

    pub fn n_trip(&self) -> usize {
        self.sets.len()
    }

    fn reference_position(&self) -> usize {
        self.arms.iter().position(|&a| a == self.reference).expect("reference is in arms")
    }

    pub fn reference_units(&self) -> Vec<usize> {
        let r = self.reference_position();
        self.sets.iter().map(|s| s[r]).collect()
    }

    /// Checks the structural invariants against the dataset the unit indices
    /// refer to.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.psi.len() != ds.n_units() {
            return Err(Error::Contract("multiplicities do not cover the dataset".into()));
        }
        let mut seen_ref = vec![false; ds.n_units()];
        let r = self.reference_position();
        for (s, set) in self.sets.iter().enumerate() {
            for (&u, &arm) in set.iter().zip(&self.arms) {
                if ds.arm(u) != arm {
                    return Err(Error::Contract(format!(
                        "set {s} places unit {u} of arm {} in the slot of arm {arm}",
                        ds.arm(u)
                    )));
                }
            }
            if std::mem::replace(&mut seen_ref[set[r]], true) {
                return Err(Error::Contract(format!("reference unit {} appears in two sets", set[r])));
            }
        }
        let mut recount = vec![0usize; ds.n_units()];
        self.sets.iter().flatten().for_each(|&u| recount[u] += 1);
        if recount != self.psi {
            return Err(Error::Contract("multiplicities disagree with the sets".into()));
        }
        for &arm in &self.arms {
            let total: usize = ds.units_in_arm(arm).iter().map(|&u| self.psi[u]).sum();
            if total != self.n_trip() {
                return Err(Error::Contract(format!("multiplicities of arm {arm} sum to {total}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmOptions {
    pub k: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub kmeans: KMeansOptions,
    pub max_reseeds: usize,
}

impl VmOptions {
    pub fn new(seed: u64) -> Self {
        Self { k: 5, epsilon: DEFAULT_EPSILON, seed, kmeans: KMeansOptions::default(), max_reseeds: 10 }
    }
}

/// Diagnostics of the clustering and matching run for one comparator arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmRun {
    pub arm: usize,
    pub caliper: f64,
    pub strata: StrataDiagnostics,
    pub stratum_sizes: Vec<usize>,
    pub assignment: Vec<usize>,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorMatch {
    pub cohort: MatchedCohort,
    pub runs: Vec<VmRun>,
}

/// Vector matching.
///
/// For each comparator arm, all units are clustered on the logit GPS of the
/// arms other than the reference and that comparator. Within every stratum
/// reference units are matched with replacement to comparator units on the
/// reference logit. Reference units matched in every run form the cohort.
pub fn vector_match(ds: &Dataset, gps: &GpsMatrix, reference: usize, opts: &VmOptions) -> Result<VectorMatch> {
    let z = ds.n_arms();
    if z < 3 {
        return Err(Error::Contract("vector matching needs at least three arms".into()));
    }
    if reference >= z {
        return Err(Error::Contract(format!("reference arm {reference} does not exist")));
    }
    if gps.n_units() != ds.n_units() || gps.n_arms() != z {
        return Err(Error::Contract("GPS matrix does not match the dataset".into()));
    }
    let ref_units = ds.units_in_arm(reference);
    let mut slot = vec![usize::MAX; ds.n_units()];
    for (pos, &u) in ref_units.iter().enumerate() {
        slot[u] = pos;
    }
    let mut partner = vec![vec![None; z]; ref_units.len()];
    let mut runs = Vec::with_capacity(z - 1);
    for t in (0..z).filter(|&t| t != reference) {
        let components: Vec<usize> = (0..z).filter(|&a| a != reference && a != t).collect();
        let points = gps.logit_columns(&components);
        let (clustering, strata) = strata_with_all_arms(
            &points,
            components.len(),
            opts.k,
            ds.treatment(),
            z,
            derive_seed(opts.seed, &[t as u64]),
            &opts.kmeans,
            opts.max_reseeds,
        )?;
        let pooled: Vec<f64> = (0..ds.n_units())
            .filter(|&i| ds.arm(i) == reference || ds.arm(i) == t)
            .map(|i| gps.logit(i, reference))
            .collect();
        let caliper = caliper_from_sd(&pooled, opts.epsilon)?;
        let mut refs = vec![Vec::new(); clustering.k()];
        let mut cands = vec![Vec::new(); clustering.k()];
        for (i, &s) in clustering.assignment.iter().enumerate() {
            if ds.arm(i) == reference {
                refs[s].push(i);
            } else if ds.arm(i) == t {
                cands[s].push(i);
            }
        }
        let mut matched = 0;
        for (r_units, c_units) in refs.iter().zip(&cands) {
            let r_scores: Vec<f64> = r_units.iter().map(|&i| gps.logit(i, reference)).collect();
            let c_scores: Vec<f64> = c_units.iter().map(|&i| gps.logit(i, reference)).collect();
            for m in caliper_nn_with_replacement(&r_scores, &c_scores, caliper)? {
                partner[slot[r_units[m.reference_unit]]][t] = Some(c_units[m.matched_unit]);
                matched += 1;
            }
        }
        runs.push(VmRun {
            arm: t,
            caliper,
            strata,
            stratum_sizes: clustering.sizes(),
            assignment: clustering.assignment,
            matched,
        });
    }
    let mut sets = Vec::new();
    for (pos, &u) in ref_units.iter().enumerate() {
        let set: Option<Vec<usize>> =
            (0..z).map(|a| if a == reference { Some(u) } else { partner[pos][a] }).collect();
        if let Some(set) = set {
            sets.push(set);
        }
    }
    if sets.is_empty() {
        warn!("vector matching produced an empty cohort");
    }
    let cohort = MatchedCohort::from_sets(DesignTag::Vm, reference, (0..z).collect(), sets, ds.n_units())?;
    Ok(VectorMatch { cohort, runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryOptions {
    pub epsilon: f64,
    pub fit: FitOptions,
    pub order: GreedyOrder,
}

impl Default for BinaryOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, fit: FitOptions::default(), order: GreedyOrder::Random { seed: 0 } }
    }
}

/// One binary propensity-score matching between two arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRun {
    pub pair: (usize, usize),
    /// Units of the two arms, in dataset order.
    pub units: Vec<usize>,
    /// `P(T = pair.0)` for each of `units`.
    pub scores: Vec<f64>,
    /// Support flags aligned with `units`.
    pub support: CommonSupport,
    pub caliper: f64,
    /// (unit of `pair.0`, unit of `pair.1`)
    pub matches: Vec<(usize, usize)>,
}

/// Binary PS fit, pairwise trimming and greedy matching without replacement.
pub fn binary_match(ds: &Dataset, pair: (usize, usize), opts: &BinaryOptions) -> Result<PairRun> {
    let z = ds.n_arms();
    if pair.0 >= z || pair.1 >= z {
        return Err(Error::Contract(format!("arm pair {pair:?} does not exist")));
    }
    let model = fit_binary_ps(ds, pair, &opts.fit)?;
    let units: Vec<usize> = (0..ds.n_units()).filter(|&i| ds.arm(i) == pair.0 || ds.arm(i) == pair.1).collect();
    let scores = binary_scores(&model, ds, &units)?;
    let arms: Vec<usize> = units.iter().map(|&i| ds.arm(i)).collect();
    let support = pairwise_support(&scores, &arms, pair)?;
    let eligible: Vec<usize> = (0..units.len()).filter(|&k| support.eligible[k]).collect();
    let pooled: Vec<f64> = eligible.iter().map(|&k| logit(scores[k])).collect();
    let caliper = caliper_from_sd(&pooled, opts.epsilon)?;
    let (mut refs, cands): (Vec<usize>, Vec<usize>) = eligible.iter().partition(|&&k| arms[k] == pair.0);
    // A random priority attached to the unit rather than its position keeps the
    // visiting order consistent across matchings that share the reference arm.
    let order = match opts.order {
        GreedyOrder::Random { seed } => {
            refs.sort_by_key(|&k| (derive_seed(seed, &[units[k] as u64]), k));
            GreedyOrder::InputOrder
        }
        other => other,
    };
    let r_scores: Vec<f64> = refs.iter().map(|&k| logit(scores[k])).collect();
    let c_scores: Vec<f64> = cands.iter().map(|&k| logit(scores[k])).collect();
    let matches = caliper_nn_without_replacement(&r_scores, &c_scores, caliper, order)?
        .into_iter()
        .map(|m| (units[refs[m.reference_unit]], units[cands[m.matched_unit]]))
        .collect();
    Ok(PairRun { pair, units, scores, support, caliper, matches })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmMatch {
    pub cohort: MatchedCohort,
    pub pairs: Vec<PairRun>,
}

/// Common referent matching for three arms: two binary matchings sharing the
/// reference arm, intersected into triplets.
pub fn crm_match(ds: &Dataset, reference: usize, opts: &BinaryOptions) -> Result<CrmMatch> {
    if ds.n_arms() != 3 {
        return Err(Error::Contract(format!(
            "common referent matching is defined for three arms, got {}",
            ds.n_arms()
        )));
    }
    if reference >= 3 {
        return Err(Error::Contract(format!("reference arm {reference} does not exist")));
    }
    let others: Vec<usize> = (0..3).filter(|&t| t != reference).collect();
    let pairs = others
        .iter()
        .map(|&t| binary_match(ds, (reference, t), opts))
        .collect::<Result<Vec<_>>>()?;
    let mut partner = vec![[None; 3]; ds.n_units()];
    for run in &pairs {
        for &(r, c) in &run.matches {
            partner[r][run.pair.1] = Some(c);
        }
    }
    let sets: Vec<Vec<usize>> = ds
        .units_in_arm(reference)
        .into_iter()
        .filter_map(|u| (0..3).map(|a| if a == reference { Some(u) } else { partner[u][a] }).collect())
        .collect();
    if sets.is_empty() {
        warn!("common referent matching produced no triplets");
    }
    let cohort = MatchedCohort::from_sets(DesignTag::Crm, reference, (0..3).collect(), sets, ds.n_units())?;
    Ok(CrmMatch { cohort, pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcMatch {
    pub cohort: MatchedCohort,
    pub run: PairRun,
}

/// Series-of-binary-comparisons step for one pair; `pair.0` is the reference.
pub fn sbc_match(ds: &Dataset, pair: (usize, usize), opts: &BinaryOptions) -> Result<SbcMatch> {
    let run = binary_match(ds, pair, opts)?;
    let sets = run.matches.iter().map(|&(r, c)| vec![r, c]).collect();
    let cohort = MatchedCohort::from_sets(DesignTag::Sbc, pair.0, vec![pair.0, pair.1], sets, ds.n_units())?;
    Ok(SbcMatch { cohort, run })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subclassification {
    /// Subclass of each unit, `0..k`.
    pub subclass: Vec<usize>,
    /// `counts[s][t]` units of arm `t` in subclass `s`.
    pub counts: Vec<Vec<usize>>,
    /// Subclasses missing at least one arm.
    pub deficient: Vec<usize>,
}

impl Subclassification {
    pub fn from_assignment(subclass: Vec<usize>, ds: &Dataset) -> Result<Self> {
        if subclass.len() != ds.n_units() {
            return Err(Error::Contract("subclass vector does not cover the dataset".into()));
        }
        let k = subclass.iter().max().map_or(0, |&m| m + 1);
        let mut counts = vec![vec![0usize; ds.n_arms()]; k];
        for (i, &s) in subclass.iter().enumerate() {
            counts[s][ds.arm(i)] += 1;
        }
        if counts.iter().any(|c| c.iter().sum::<usize>() == 0) {
            return Err(Error::Contract("subclass ids must be contiguous".into()));
        }
        let deficient = (0..k).filter(|&s| counts[s].contains(&0)).collect();
        Ok(Self { subclass, counts, deficient })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }
}

/// K-means subclasses on all logit GPS components, with no arm repair.
pub fn kmc_subclassify(
    ds: &Dataset,
    gps: &GpsMatrix,
    k: usize,
    seed: u64,
    kmeans_opts: &KMeansOptions,
) -> Result<Subclassification> {
    if gps.n_units() != ds.n_units() || gps.n_arms() != ds.n_arms() {
        return Err(Error::Contract("GPS matrix does not match the dataset".into()));
    }
    let z = ds.n_arms();
    let all: Vec<usize> = (0..z).collect();
    let clustering = kmeans(&gps.logit_columns(&all), z, k, seed, kmeans_opts)?;
    let sub = Subclassification::from_assignment(clustering.assignment, ds)?;
    if !sub.deficient.is_empty() {
        warn!("{} of {} subclasses miss at least one arm", sub.deficient.len(), sub.k());
    }
    Ok(sub)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    /// `1 / r(T_i, X_i)` for each unit.
    pub weights: Vec<f64>,
}

/// Inverse probability weights, untrimmed.
pub fn ipw_weights(ds: &Dataset, gps: &GpsMatrix) -> Result<WeightVector> {
    if gps.n_units() != ds.n_units() || gps.n_arms() != ds.n_arms() {
        return Err(Error::Contract("GPS matrix does not match the dataset".into()));
    }
    let weights: Vec<f64> = (0..ds.n_units()).map(|i| 1.0 / gps.prob(i, ds.arm(i))).collect();
    let extreme = weights.iter().filter(|&&w| w > EXTREME_WEIGHT).count();
    if extreme > 0 {
        warn!("{extreme} inverse probability weights exceed {EXTREME_WEIGHT:e}");
    }
    Ok(WeightVector { weights })
}
