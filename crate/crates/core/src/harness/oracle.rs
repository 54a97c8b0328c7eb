use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{ProjectionSet, SubsetModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub argmin: SubsetModel,
    pub argmin_index: usize,
    /// `‖f̄_J − f₀‖²_n` at the minimizer.
    pub approximation: f64,
}

/// `inf_J ‖f̄_J − f₀‖²_n + σ² r_J / n + λσ² C_J / n`, by exhaustive scan.
pub fn resolvability_oracle(
    design: &DMatrix<f64>,
    f0: &[f64],
    models: &[SubsetModel],
    sigma: f64,
    lambda: f64,
) -> Result<OracleValue> {
    let set = ProjectionSet::new(design, models.to_vec())?;
    resolvability_from_set(&set, f0, sigma, lambda)
}

pub fn resolvability_from_set(set: &ProjectionSet, f0: &[f64], sigma: f64, lambda: f64) -> Result<OracleValue> {
    if !(sigma >= 0.0 && sigma.is_finite() && lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("need finite σ ≥ 0 and λ ≥ 0, got σ = {sigma}, λ = {lambda}")));
    }
    let n = set.n() as f64;
    let s2 = sigma * sigma;
    let fits = set.fit_all(f0)?;
    let mut best: Option<OracleValue> = None;
    for (i, (md, fit)) in set.models().iter().zip(&fits).enumerate() {
        let approx = fit.rss / n;
        let v = approx + s2 * fit.rank as f64 / n + lambda * s2 * md.complexity / n;
        if best.as_ref().is_none_or(|b| v < b.value) {
            best = Some(OracleValue {
                value: v,
                argmin: md.clone(),
                argmin_index: i,
                approximation: approx,
            });
        }
    }
    best.ok_or_else(|| Error::Data("empty model list".into()))
}
