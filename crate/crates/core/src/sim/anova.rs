//! Fixed-effects factorial ANOVA with main effects and two-way interactions,
//! used to rank simulation factors by mean square.
//!
//! Factors are dummy coded against their first level. Sums of squares are of
//! type II: each term is adjusted for every term that does not contain it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Config-level table: one row per config, factor values as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub factors: Vec<String>,
    /// `values[row][factor]`
    pub values: Vec<Vec<String>>,
    pub response: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub term: String,
    pub df: usize,
    pub sum_sq: f64,
    pub mean_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    /// Terms sorted by mean square, largest first.
    pub rows: Vec<AnovaRow>,
    pub residual: AnovaRow,
    /// Terms skipped because the design cannot separate them.
    pub aliased: Vec<String>,
}

struct Term {
    name: String,
    factors: Vec<usize>,
    columns: Vec<DVector<f64>>,
}

fn dummies(column: &[String]) -> Vec<DVector<f64>> {
    let mut levels: Vec<&String> = Vec::new();
    for v in column {
        if !levels.contains(&v) {
            levels.push(v);
        }
    }
    levels[1..]
        .iter()
        .map(|&l| DVector::from_iterator(column.len(), column.iter().map(|v| if v == l { 1.0 } else { 0.0 })))
        .collect()
}

/// Residual sum of squares and rank of the least-squares fit on `columns`.
fn fit(y: &DVector<f64>, columns: &[&DVector<f64>]) -> Result<(f64, usize)> {
    let n = y.len();
    let n_cols = columns.len();
    let x = DMatrix::from_fn(n, n_cols, |i, j| columns[j][i]);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (n.max(columns.len()) as f64) * f64::EPSILON * 16.0;
    let rank = svd.rank(tol);
    let beta = svd.solve(y, tol).map_err(|e| Error::Numerical(e.to_string()))?;
    let resid = y - x * beta;
    Ok((resid.norm_squared(), rank))
}

/// Ranks main effects and two-way interactions of `table` by mean square.
///
/// Terms the design cannot estimate are an [`Error::Aliased`] unless
/// `drop_aliased` is set, in which case they are reported and skipped.
pub fn anova_rank(table: &FactorTable, drop_aliased: bool) -> Result<AnovaTable> {
    let n = table.response.len();
    let f = table.factors.len();
    if table.values.len() != n || table.values.iter().any(|r| r.len() != f) {
        return Err(Error::Contract("factor table is ragged".into()));
    }
    if f == 0 {
        return Err(Error::Validation("no factors given".into()));
    }
    let mut mains = Vec::with_capacity(f);
    for (j, name) in table.factors.iter().enumerate() {
        let column: Vec<String> = table.values.iter().map(|r| r[j].clone()).collect();
        let cols = dummies(&column);
        if cols.is_empty() {
            return Err(Error::Validation(format!("factor '{name}' has a single level")));
        }
        mains.push(cols);
    }
    let mut terms: Vec<Term> = (0..f)
        .map(|j| Term { name: table.factors[j].clone(), factors: vec![j], columns: mains[j].clone() })
        .collect();
    for a in 0..f {
        for b in a + 1..f {
            let columns = mains[a].iter().flat_map(|u| mains[b].iter().map(move |v| u.component_mul(v))).collect();
            terms.push(Term {
                name: format!("{}:{}", table.factors[a], table.factors[b]),
                factors: vec![a, b],
                columns,
            });
        }
    }
    let y = DVector::from_column_slice(&table.response);
    let intercept = DVector::from_element(n, 1.0);
    // differences below this are rounding noise
    let floor = 1e-12 * y.norm_squared();
    let model = |include: &dyn Fn(usize) -> bool| -> Vec<&DVector<f64>> {
        std::iter::once(&intercept)
            .chain(terms.iter().enumerate().filter(|(k, _)| include(*k)).flat_map(|(_, t)| t.columns.iter()))
            .collect()
    };
    let (rss_full, rank_full) = fit(&y, &model(&|_| true))?;
    let mut rows = Vec::new();
    let mut aliased = Vec::new();
    for (k, term) in terms.iter().enumerate() {
        let contains = |other: usize| other != k && term.factors.iter().all(|x| terms[other].factors.contains(x));
        let (rss_without, rank_without) = fit(&y, &model(&|o| o != k && !contains(o)))?;
        let (rss_with, rank_with) = fit(&y, &model(&|o| !contains(o)))?;
        let df = rank_with - rank_without;
        if df < term.columns.len() {
            aliased.push(term.name.clone());
            if df == 0 {
                continue;
            }
        }
        let sum_sq = if rss_without - rss_with <= floor { 0.0 } else { rss_without - rss_with };
        rows.push(AnovaRow { term: term.name.clone(), df, sum_sq, mean_sq: sum_sq / df as f64 });
    }
    if !aliased.is_empty() && !drop_aliased {
        return Err(Error::Aliased(aliased));
    }
    rows.sort_by(|a, b| b.mean_sq.total_cmp(&a.mean_sq));
    let df_res = n - rank_full;
    let rss = if rss_full <= floor { 0.0 } else { rss_full };
    let residual = AnovaRow {
        term: "Residuals".into(),
        df: df_res,
        sum_sq: rss,
        mean_sq: if df_res > 0 { rss / df_res as f64 } else { f64::NAN },
    };
    Ok(AnovaTable { rows, residual, aliased })
}
