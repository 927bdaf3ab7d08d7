//! Dataset representation and delimited-text ingestion.
//!
//! Treatment labels are mapped to arm indices in order of first appearance.
//! Arms are 0-based inside the library; labels are what users see.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Maximum number of distinct treatment labels accepted on input.
pub const MAX_ARMS: usize = 64;

/// N units by P covariates, one treatment arm per unit and an optional outcome.
///
/// Immutable after construction. Every arm index in `0..n_arms` has at least
/// one unit and all covariates are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Vec<f64>,
    n_covariates: usize,
    treatment: Vec<usize>,
    outcome: Option<Vec<f64>>,
    unit_ids: Vec<String>,
    covariate_names: Vec<String>,
    arm_labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major covariates.
    ///
    /// Unit ids default to `1..=N` and covariate names to `x1..xP`.
    pub fn new(
        covariates: Vec<f64>,
        n_covariates: usize,
        treatment: Vec<usize>,
        arm_labels: Vec<String>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n_covariates == 0 {
            return Err(Error::Validation("at least one covariate is required".into()));
        }
        if covariates.len() != n * n_covariates {
            return Err(Error::Contract(format!(
                "covariate buffer has {} values, expected {} x {}",
                covariates.len(),
                n,
                n_covariates
            )));
        }
        let z = arm_labels.len();
        if z < 2 {
            return Err(Error::Validation(format!(
                "at least two treatment arms are required, found {z}"
            )));
        }
        if z > MAX_ARMS {
            return Err(Error::Validation(format!(
                "{z} treatment labels exceed the limit of {MAX_ARMS}"
            )));
        }
        if n < z {
            return Err(Error::Validation(format!("{n} units cannot populate {z} arms")));
        }
        let mut counts = vec![0usize; z];
        for (i, &t) in treatment.iter().enumerate() {
            if t >= z {
                return Err(Error::Contract(format!("unit {i} has arm index {t} but only {z} arms")));
            }
            counts[t] += 1;
        }
        if let Some(t) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "treatment arm '{}' has no units",
                arm_labels[t]
            )));
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: pos / n_covariates + 1,
                message: format!("non-finite covariate value in column {}", pos % n_covariates + 1),
            });
        }
        Ok(Self {
            covariates,
            n_covariates,
            treatment,
            outcome: None,
            unit_ids: (1..=n).map(|i| i.to_string()).collect(),
            covariate_names: (1..=n_covariates).map(|p| format!("x{p}")).collect(),
            arm_labels,
        })
    }

    /// Builds a dataset whose arm labels are `"1".."Z"`.
    pub fn with_numbered_arms(
        covariates: Vec<f64>,
        n_covariates: usize,
        treatment: Vec<usize>,
        n_arms: usize,
    ) -> Result<Self> {
        let labels = (1..=n_arms).map(|t| t.to_string()).collect();
        Self::new(covariates, n_covariates, treatment, labels)
    }

    pub fn with_outcome(mut self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n_units() {
            return Err(Error::Contract(format!(
                "outcome has {} values for {} units",
                outcome.len(),
                self.n_units()
            )));
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse { row: i + 1, message: "non-finite outcome".into() });
        }
        self.outcome = Some(outcome);
        Ok(self)
    }

    pub fn with_unit_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_units() {
            return Err(Error::Contract("unit id count does not match unit count".into()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Validation(format!("unit id '{dup}' appears more than once")));
        }
        self.unit_ids = ids;
        Ok(self)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_covariates {
            return Err(Error::Contract("covariate name count does not match P".into()));
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn n_arms(&self) -> usize {
        self.arm_labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.n_covariates..(i + 1) * self.n_covariates]
    }

    pub fn covariate(&self, i: usize, p: usize) -> f64 {
        self.covariates[i * self.n_covariates + p]
    }

    pub fn treatment(&self) -> &[usize] {
        &self.treatment
    }

    pub fn arm(&self, i: usize) -> usize {
        self.treatment[i]
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        self.outcome.as_deref()
    }

    /// Outcomes, or a contract error for balance-only datasets.
    pub fn require_outcome(&self) -> Result<&[f64]> {
        self.outcome()
            .ok_or_else(|| Error::Contract("dataset has no outcome column".into()))
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn arm_labels(&self) -> &[String] {
        &self.arm_labels
    }

    pub fn arm_index(&self, label: &str) -> Option<usize> {
        self.arm_labels.iter().position(|l| l == label)
    }

    /// Indices of the units assigned to arm `t`, ascending.
    pub fn units_in_arm(&self, t: usize) -> Vec<usize> {
        (0..self.n_units()).filter(|&i| self.treatment[i] == t).collect()
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_arms()];
        for &t in &self.treatment {
            counts[t] += 1;
        }
        counts
    }

    /// Restriction to the given units (in the given order), keeping arm labels.
    ///
    /// Fails if the restriction leaves an arm without units.
    pub fn subset(&self, units: &[usize]) -> Result<Dataset> {
        let p = self.n_covariates;
        let mut covariates = Vec::with_capacity(units.len() * p);
        for &i in units {
            covariates.extend_from_slice(self.row(i));
        }
        let mut counts = vec![0usize; self.n_arms()];
        for &i in units {
            counts[self.treatment[i]] += 1;
        }
        if let Some(t) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptySupport { arm: t });
        }
        Ok(Dataset {
            covariates,
            n_covariates: p,
            treatment: units.iter().map(|&i| self.treatment[i]).collect(),
            outcome: self.outcome.as_ref().map(|y| units.iter().map(|&i| y[i]).collect()),
            unit_ids: units.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            arm_labels: self.arm_labels.clone(),
        })
    }
}

/// Group sizes and the default reference arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentSummary {
    pub counts: Vec<usize>,
    /// Smallest arm; ties go to the lowest index.
    pub reference: usize,
}

pub fn summarize(ds: &Dataset) -> TreatmentSummary {
    let counts = ds.arm_counts();
    let reference = counts
        .iter()
        .enumerate()
        .min_by_key(|&(t, &c)| (c, t))
        .map(|(t, _)| t)
        .unwrap_or(0);
    TreatmentSummary { counts, reference }
}

/// Column roles for delimited-text input. Columns not named here are covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub treatment: String,
    /// Used when present in the header.
    pub outcome: String,
    /// Used when present in the header.
    pub id: String,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            id: "id".into(),
            delimiter: b',',
        }
    }
}

/// Reads a delimited file with a header row into a [`Dataset`].
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let treat_col = find(&schema.treatment).ok_or_else(|| {
        Error::Schema(format!("missing treatment column '{}'", schema.treatment))
    })?;
    let outcome_col = find(&schema.outcome);
    let id_col = find(&schema.id);
    let cov_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != treat_col && Some(c) != outcome_col && Some(c) != id_col)
        .collect();
    if cov_cols.is_empty() {
        return Err(Error::Schema("no covariate columns".into()));
    }

    let mut labels: Vec<String> = Vec::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();
    let mut covariates = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut ids = Vec::new();

    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let label = record
            .get(treat_col)
            .ok_or_else(|| Error::Parse { row, message: "missing treatment value".into() })?;
        let arm = match label_index.get(label) {
            Some(&t) => t,
            None => {
                if labels.len() == MAX_ARMS {
                    return Err(Error::Validation(format!(
                        "more than {MAX_ARMS} distinct treatment labels"
                    )));
                }
                labels.push(label.to_owned());
                label_index.insert(label.to_owned(), labels.len() - 1);
                labels.len() - 1
            }
        };
        treatment.push(arm);
        for &c in &cov_cols {
            let raw = record.get(c).unwrap_or("");
            covariates.push(parse_finite(raw, row, &header[c])?);
        }
        if let Some(c) = outcome_col {
            outcome.push(parse_finite(record.get(c).unwrap_or(""), row, &header[c])?);
        }
        ids.push(match id_col {
            Some(c) => record.get(c).unwrap_or("").to_owned(),
            None => row.to_string(),
        });
    }

    let names = cov_cols.iter().map(|&c| header[c].clone()).collect();
    let ds = Dataset::new(covariates, cov_cols.len(), treatment, labels)?
        .with_unit_ids(ids)?
        .with_covariate_names(names)?;
    if outcome_col.is_some() {
        ds.with_outcome(outcome)
    } else {
        Ok(ds)
    }
}

fn parse_finite(raw: &str, row: usize, column: &str) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            message: format!("column '{column}' value '{raw}' is not a finite number"),
        }),
    }
}

/// Writes a dataset in the layout read by [`load_dataset`] with the default schema.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["id".to_owned(), "treatment".to_owned()];
    if ds.outcome().is_some() {
        header.push("outcome".into());
    }
    header.extend(ds.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..ds.n_units() {
        let mut rec = vec![ds.unit_ids()[i].clone(), ds.arm_labels()[ds.arm(i)].clone()];
        if let Some(y) = ds.outcome() {
            rec.push(y[i].to_string());
        }
        rec.extend(ds.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
