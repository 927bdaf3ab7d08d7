use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use vecmatch::data::{load_dataset, Dataset, Schema};
use vecmatch::designs::{DesignTag, MatchedCohort, Subclassification, WeightVector};

use crate::error::{CliError, CliResult};

/// Input dataset and the names of its special columns.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Delimited text file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "treatment")]
    pub treatment_col: String,
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
    #[arg(long, default_value = "id")]
    pub id_col: String,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

impl DataArgs {
    pub fn schema(&self) -> CliResult<Schema> {
        if !self.delimiter.is_ascii() {
            return Err(CliError::Usage(format!("delimiter '{}' is not a single byte", self.delimiter)));
        }
        Ok(Schema {
            treatment: self.treatment_col.clone(),
            outcome: self.outcome_col.clone(),
            id: self.id_col.clone(),
            delimiter: self.delimiter as u8,
        })
    }

    pub fn load(&self) -> CliResult<Dataset> {
        Ok(load_dataset(&self.data, &self.schema()?)?)
    }
}

pub fn prepare_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Resolves an arm label, or the smallest arm when none is given.
pub fn resolve_arm(ds: &Dataset, label: Option<&str>) -> CliResult<usize> {
    match label {
        Some(l) => ds.arm_index(l).ok_or_else(|| {
            CliError::Core(vecmatch::Error::Validation(format!(
                "treatment '{l}' is not in the data (labels: {})",
                ds.arm_labels().join(", ")
            )))
        }),
        None => Ok(vecmatch::data::summarize(ds).reference),
    }
}

pub fn id_index(ds: &Dataset) -> HashMap<&str, usize> {
    ds.unit_ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}

fn lookup(index: &HashMap<&str, usize>, id: &str, file: &Path) -> CliResult<usize> {
    index.get(id).copied().ok_or_else(|| {
        CliError::Core(vecmatch::Error::Validation(format!(
            "{}: unit '{id}' is not in the data",
            file.display()
        )))
    })
}

fn invalid(file: &Path, message: impl std::fmt::Display) -> CliError {
    CliError::Core(vecmatch::Error::Validation(format!("{}: {message}", file.display())))
}

/// Matched sets, one row per set and one column per arm label holding unit
/// ids. The reference arm comes first.
pub fn write_cohort(path: &Path, cohort: &MatchedCohort, ds: &Dataset) -> CliResult<()> {
    let mut order: Vec<usize> = (0..cohort.arms.len()).collect();
    order.sort_by_key(|&j| cohort.arms[j] != cohort.reference);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["set".to_owned()];
    header.extend(order.iter().map(|&j| ds.arm_labels()[cohort.arms[j]].clone()));
    w.write_record(&header)?;
    for (s, set) in cohort.sets.iter().enumerate() {
        let mut rec = vec![(s + 1).to_string()];
        rec.extend(order.iter().map(|&j| ds.unit_ids()[set[j]].clone()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cohort file written by [`write_cohort`]; the first arm column is
/// the reference unless `reference` names another.
pub fn read_cohort(path: &Path, ds: &Dataset, design: DesignTag, reference: Option<&str>) -> CliResult<MatchedCohort> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.first().map(String::as_str) != Some("set") || header.len() < 3 {
        return Err(invalid(path, "expected a 'set' column followed by at least two arm columns"));
    }
    let arms = header[1..]
        .iter()
        .map(|l| ds.arm_index(l).ok_or_else(|| invalid(path, format!("arm '{l}' is not in the data"))))
        .collect::<CliResult<Vec<usize>>>()?;
    let reference = match reference {
        Some(l) => ds.arm_index(l).filter(|a| arms.contains(a)).ok_or_else(|| invalid(path, format!("reference '{l}' has no column")))?,
        None => arms[0],
    };
    let index = id_index(ds);
    let mut sets = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let set = rec.iter().skip(1).map(|id| lookup(&index, id, path)).collect::<CliResult<Vec<usize>>>()?;
        sets.push(set);
    }
    let cohort = MatchedCohort::from_sets(design, reference, arms, sets, ds.n_units())?;
    cohort.validate(ds).map_err(|e| invalid(path, e))?;
    Ok(cohort)
}

pub fn write_weights(path: &Path, weights: &WeightVector, ds: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "treatment", "weight"])?;
    for (i, v) in weights.weights.iter().enumerate() {
        w.write_record([ds.unit_ids()[i].as_str(), ds.arm_labels()[ds.arm(i)].as_str(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads per-unit values keyed by id; every unit of `ds` must appear once.
fn read_unit_column(path: &Path, ds: &Dataset, column: &str) -> CliResult<Vec<String>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let id_col = header.iter().position(|h| h == "id").ok_or_else(|| invalid(path, "missing 'id' column"))?;
    let col = header.iter().position(|h| h == column).ok_or_else(|| invalid(path, format!("missing '{column}' column")))?;
    let index = id_index(ds);
    let mut out = vec![None; ds.n_units()];
    for rec in r.records() {
        let rec = rec?;
        let i = lookup(&index, rec.get(id_col).unwrap_or(""), path)?;
        if out[i].replace(rec.get(col).unwrap_or("").to_owned()).is_some() {
            return Err(invalid(path, format!("unit '{}' is listed twice", ds.unit_ids()[i])));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| invalid(path, format!("unit '{}' is missing", ds.unit_ids()[i]))))
        .collect()
}

pub fn read_weights(path: &Path, ds: &Dataset) -> CliResult<WeightVector> {
    let weights = read_unit_column(path, ds, "weight")?
        .iter()
        .map(|v| match v.parse::<f64>() {
            Ok(w) if w.is_finite() && w >= 0.0 => Ok(w),
            _ => Err(invalid(path, format!("weight '{v}' is not a nonnegative number"))),
        })
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(WeightVector { weights })
}

pub fn write_subclasses(path: &Path, sub: &Subclassification, ds: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "treatment", "subclass"])?;
    for (i, s) in sub.subclass.iter().enumerate() {
        w.write_record([ds.unit_ids()[i].as_str(), ds.arm_labels()[ds.arm(i)].as_str(), &(s + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_subclasses(path: &Path, ds: &Dataset) -> CliResult<Subclassification> {
    let labels = read_unit_column(path, ds, "subclass")?
        .iter()
        .map(|v| match v.parse::<usize>() {
            Ok(s) if s >= 1 => Ok(s - 1),
            _ => Err(invalid(path, format!("subclass '{v}' is not a positive integer"))),
        })
        .collect::<CliResult<Vec<usize>>>()?;
    Subclassification::from_assignment(labels, ds).map_err(|e| invalid(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
