use std::path::Path;

use clap::Args;
use serde::Serialize;
use vecmatch::data::Dataset;
use vecmatch::gps::{fit_multinomial_logit, predict_gps, FitOptions, GpsMatrix, GpsModel};

use super::{Common, Run};
use crate::error::CliResult;
use crate::io::{num, write_json, DataArgs};

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Ridge penalty on the slopes of the assignment model.
    #[arg(long, default_value_t = FitOptions::default().ridge)]
    pub ridge: f64,
    #[arg(long, default_value_t = FitOptions::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = FitOptions::default().max_iter)]
    pub max_iter: usize,
}

impl FitArgs {
    pub fn options(&self) -> FitOptions {
        FitOptions { ridge: self.ridge, tol: self.tol, max_iter: self.max_iter }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GpsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Serialize)]
struct ArmCoefficients<'a> {
    arm: &'a str,
    intercept: f64,
    slopes: Vec<(&'a str, f64)>,
}

/// Model coefficients keyed by labels rather than indices.
#[derive(Serialize)]
pub struct ModelReport<'a> {
    pinned_arm: &'a str,
    coefficients: Vec<ArmCoefficients<'a>>,
    converged: bool,
    iterations: usize,
    penalized_log_likelihood: f64,
    grad_norm: f64,
    ridge: f64,
}

impl<'a> ModelReport<'a> {
    pub fn new(model: &GpsModel, ds: &'a Dataset) -> Self {
        let label = |a: usize| ds.arm_labels()[a].as_str();
        let coefficients = model
            .coefficients
            .iter()
            .zip(&model.arms)
            .map(|(c, &a)| ArmCoefficients {
                arm: label(a),
                intercept: c[0],
                slopes: ds.covariate_names().iter().map(String::as_str).zip(c[1..].iter().copied()).collect(),
            })
            .collect();
        Self {
            pinned_arm: label(*model.arms.last().expect("a model has arms")),
            coefficients,
            converged: model.converged,
            iterations: model.iterations,
            penalized_log_likelihood: model.penalized_log_likelihood,
            grad_norm: model.grad_norm,
            ridge: model.ridge,
        }
    }
}

/// One row per unit: id, treatment and `p_<label>` for every arm.
pub fn write_gps(path: &Path, gps: &GpsMatrix, ds: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_owned(), "treatment".to_owned()];
    header.extend(ds.arm_labels().iter().map(|l| format!("p_{l}")));
    w.write_record(&header)?;
    for i in 0..ds.n_units() {
        let mut rec = vec![ds.unit_ids()[i].clone(), ds.arm_labels()[ds.arm(i)].clone()];
        rec.extend(gps.prob_row(i).iter().map(|&p| num(p)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &GpsArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("gps", argv, args, &args.common)?;
    run.input(&args.data.data)?;
    let ds = args.data.load()?;
    let model = fit_multinomial_logit(&ds, &args.fit.options())?;
    let gps = predict_gps(&model, &ds)?;
    write_gps(&run.output("gps.csv"), &gps, &ds)?;
    write_json(&run.output("model.json"), &ModelReport::new(&model, &ds))?;
    run.finish()
}
