use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use vecmatch::sim::{anova_rank, FactorTable};

use super::matching::DesignArg;
use super::simulate::FACTOR_COLUMNS;
use super::{Common, Run};
use crate::error::{CliError, CliResult};
use crate::io::{num, write_json};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    MeanMax2sb,
    MeanPctMatched,
}

impl Response {
    fn column(self) -> &'static str {
        match self {
            Response::MeanMax2sb => "mean_max2sb",
            Response::MeanPctMatched => "mean_pct_matched",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AnovaArgs {
    /// metrics.csv written by `simulate`.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, value_enum)]
    pub design: DesignArg,
    #[arg(long, value_enum, default_value_t = Response::MeanMax2sb)]
    pub response: Response,
    /// Report and skip terms the design cannot separate instead of failing.
    #[arg(long)]
    pub drop_aliased: bool,
    #[command(flatten)]
    pub common: Common,
}

/// Config rows of one design with every factor that takes more than one level.
fn factor_table(args: &AnovaArgs) -> CliResult<FactorTable> {
    let path = &args.metrics;
    let invalid = |m: String| CliError::Usage(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| invalid(format!("missing column '{name}'")));
    let factor_cols = FACTOR_COLUMNS.iter().map(|f| col(f)).collect::<CliResult<Vec<_>>>()?;
    let (design_col, response_col) = (col("design")?, col(args.response.column())?);
    let design = vecmatch::designs::DesignTag::from(args.design).to_string();

    let mut values = Vec::new();
    let mut response = Vec::new();
    let mut skipped = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.get(design_col) != Some(design.as_str()) {
            continue;
        }
        let raw = rec.get(response_col).unwrap_or("");
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => response.push(v),
            _ => {
                skipped += 1;
                continue;
            }
        }
        values.push(factor_cols.iter().map(|&c| rec.get(c).unwrap_or("").to_owned()).collect::<Vec<_>>());
    }
    if skipped > 0 {
        log::warn!("{skipped} configs without a finite {} were left out", args.response.column());
    }
    if values.is_empty() {
        return Err(invalid(format!("no rows with a finite {} for design {design}", args.response.column())));
    }
    let varying: Vec<usize> = (0..FACTOR_COLUMNS.len())
        .filter(|&j| values.iter().any(|row| row[j] != values[0][j]))
        .collect();
    Ok(FactorTable {
        factors: varying.iter().map(|&j| FACTOR_COLUMNS[j].to_owned()).collect(),
        values: values.iter().map(|row| varying.iter().map(|&j| row[j].clone()).collect()).collect(),
        response,
    })
}

pub fn run(args: &AnovaArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("anova", argv, args, &args.common)?;
    run.input(&args.metrics)?;
    let table = factor_table(args)?;
    let result = anova_rank(&table, args.drop_aliased)?;

    let mut w = csv::Writer::from_path(run.output("anova.csv"))?;
    w.write_record(["rank", "term", "df", "sum_sq", "mean_sq"])?;
    for (i, row) in result.rows.iter().enumerate() {
        w.write_record([(i + 1).to_string(), row.term.clone(), row.df.to_string(), num(row.sum_sq), num(row.mean_sq)])?;
    }
    let res = &result.residual;
    w.write_record([String::new(), res.term.clone(), res.df.to_string(), num(res.sum_sq), num(res.mean_sq)])?;
    w.flush()?;
    write_json(&run.output("anova.json"), &result)?;
    run.finish()
}
