use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::lq_norm;

use super::estimators::EstimatorSpec;
use super::generator::{GeneratorSpec, TruthSpec};
use super::risk::{estimate_risk, BudgetSpec, RiskOptions, RiskReport};

/// A single Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub estimator: EstimatorSpec,
    pub n: usize,
    pub replicates: usize,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    #[serde(default)]
    pub oracle_lambda: Option<f64>,
    #[serde(default)]
    pub closed_form: bool,
}

fn default_test_points() -> usize {
    10_000
}

impl ExperimentConfig {
    pub fn options(&self, workers: Option<usize>) -> RiskOptions {
        RiskOptions {
            replicates: self.replicates,
            test_points: self.test_points,
            workers,
            budget: self.budget,
            oracle_lambda: self.oracle_lambda,
            closed_form: self.closed_form,
        }
    }

    pub fn run(&self, workers: Option<usize>) -> Result<RiskReport> {
        let est = self.estimator.build()?;
        estimate_risk(est.as_ref(), &self.generator, self.n, &self.options(workers))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    N,
    M,
    T,
    Q,
    K,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(SweepAxis::N),
            "m" => Ok(SweepAxis::M),
            "t" => Ok(SweepAxis::T),
            "q" => Ok(SweepAxis::Q),
            "k" => Ok(SweepAxis::K),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}'; expected n, m, t, q or k"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_risk: f64,
    pub std_err: f64,
    pub rate_prediction: Option<f64>,
    pub ratio: Option<f64>,
    pub report: RiskReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log mean_risk` against `log value`.
    pub slope: Option<f64>,
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{what} grid values must be positive integers, got {v}")))
    }
}

fn apply(base: &ExperimentConfig, axis: SweepAxis, v: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::N => cfg.n = as_count(v, "n")?,
        SweepAxis::M => {
            let m = as_count(v, "M")?;
            cfg.generator.design = cfg.generator.design.with_dict_size(m)?;
        }
        SweepAxis::T => {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("t grid values must be positive, got {v}")));
            }
            let q = cfg.budget.map(|b| b.q).filter(|q| *q > 0.0).unwrap_or(1.0);
            cfg.generator.truth = match &cfg.generator.truth {
                TruthSpec::Flat { .. } => TruthSpec::Flat { t: v },
                TruthSpec::Sparse { k, .. } => TruthSpec::Sparse {
                    k: *k,
                    amplitude: v / (*k as f64).powf(1.0 / q),
                },
                TruthSpec::Coefficients { theta } => {
                    let norm = lq_norm(theta, q)?;
                    if norm == 0.0 {
                        return Err(Error::Config("cannot rescale a zero truth".into()));
                    }
                    TruthSpec::Coefficients {
                        theta: theta.iter().map(|c| c * v / norm).collect(),
                    }
                }
            };
            if let Some(b) = cfg.budget.as_mut() {
                b.t = Some(v);
            }
        }
        SweepAxis::Q => {
            let b = cfg
                .budget
                .as_mut()
                .ok_or_else(|| Error::Config("a q sweep needs a budget".into()))?;
            b.q = v;
        }
        SweepAxis::K => {
            let k = as_count(v, "k")?;
            match &mut cfg.generator.truth {
                TruthSpec::Sparse { k: kk, .. } => *kk = k,
                _ => return Err(Error::Config("a k sweep needs a sparse truth".into())),
            }
            if let Some(b) = cfg.budget.as_mut() {
                b.k = Some(k);
            }
        }
    }
    Ok(cfg)
}

/// Ordinary least-squares slope of `ln y` on `ln x`; `None` unless every
/// value is positive and the `x` values are not all equal.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Runs `base` at every grid value of `axis`.
pub fn rate_sweep(axis: SweepAxis, grid: &[f64], base: &ExperimentConfig, workers: Option<usize>) -> Result<SweepTable> {
    if grid.len() < 3 {
        return Err(Error::Config(format!("a sweep needs at least 3 grid points, got {}", grid.len())));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &v in grid {
        let report = apply(base, axis, v)?.run(workers)?;
        rows.push(SweepRow {
            value: v,
            mean_risk: report.mean_risk,
            std_err: report.std_err,
            rate_prediction: report.rate_prediction,
            ratio: report.ratio,
            report,
        });
    }
    let slope = match axis {
        SweepAxis::Q => None,
        _ => log_log_slope(grid, &rows.iter().map(|r| r.mean_risk).collect::<Vec<_>>()),
    };
    Ok(SweepTable { axis, rows, slope })
}
