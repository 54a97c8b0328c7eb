//! Exponential-weight aggregation of candidate estimates.
//!
//! Three engines are provided:
//!
//! * [`arm_aggregate`]: adaptive regression by mixing with a Gaussian error
//!   density, optional data splitting for the variance estimates.
//! * [`catoni_aggregate`]: progressive mixture with a Gaussian kernel of
//!   precision `λ_C`.
//! * [`mls_aggregate`]: mixing of subset least-squares fits through their
//!   unbiased risk estimates (fixed design, known `σ`).
//!
//! ARM and Catoni both average the per-prefix posterior weights over the
//! sample (a Cesàro mean). Posteriors are carried as log-sums and the
//! average is accumulated with log-add-exp, so nothing underflows for
//! long samples.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_add_exp, logsumexp};
use crate::selection::{FitResult, SubsetModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Candidate estimates evaluated at the observation points.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// `N × n`: row `k` is candidate `k` at each observation.
    predictions: DMatrix<f64>,
    priors: Vec<f64>,
    labels: Vec<String>,
}

impl CandidateSet {
    /// Priors must be nonnegative with a positive sum not exceeding one.
    pub fn new(predictions: DMatrix<f64>, priors: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        let n_cand = predictions.nrows();
        if n_cand == 0 {
            return Err(Error::Data("candidate set is empty".into()));
        }
        if priors.len() != n_cand || labels.len() != n_cand {
            return Err(Error::Data(format!(
                "{} candidates but {} priors and {} labels",
                n_cand,
                priors.len(),
                labels.len()
            )));
        }
        if predictions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("candidate predictions must be finite".into()));
        }
        if priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("priors must be finite and nonnegative".into()));
        }
        let total: f64 = priors.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("priors put no mass on any candidate".into()));
        }
        if total > 1.0 + 1e-9 {
            return Err(Error::Config(format!("priors sum to {total} > 1")));
        }
        Ok(Self {
            predictions,
            priors,
            labels,
        })
    }

    /// Equal priors and labels `c0, c1, …`.
    pub fn uniform(predictions: DMatrix<f64>) -> Result<Self> {
        let k = predictions.nrows();
        let labels = (0..k).map(|i| format!("c{i}")).collect();
        Self::new(predictions, vec![1.0 / k as f64; k], labels)
    }

    pub fn len(&self) -> usize {
        self.predictions.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn n_points(&self) -> usize {
        self.predictions.ncols()
    }
    pub fn predictions(&self) -> &DMatrix<f64> {
        &self.predictions
    }
    pub fn priors(&self) -> &[f64] {
        &self.priors
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Clips every prediction into `[-bound, bound]`.
    pub fn clip(&mut self, bound: f64) {
        self.predictions.apply(|x| *x = x.clamp(-bound, bound));
    }

    /// `Σ_k W_k f̌_k` at the observation points.
    pub fn combine(&self, weights: &WeightVector) -> Vec<f64> {
        let mut out = vec![0.0; self.n_points()];
        for (k, &w) in weights.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += w * self.predictions[(k, i)];
            }
        }
        out
    }

    fn log_priors(&self) -> Vec<f64> {
        self.priors.iter().map(|p| p.ln()).collect()
    }

    fn check_response(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n_points() {
            return Err(Error::Data(format!(
                "{} responses for candidates evaluated at {} points",
                y.len(),
                self.n_points()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("responses must be finite".into()));
        }
        Ok(())
    }
}

/// A probability vector over candidates. `log_weights` is authoritative;
/// `weights` is its normalized exponential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl WeightVector {
    /// Normalizes unnormalized log weights.
    pub fn from_log_weights(raw: Vec<f64>) -> Result<Self> {
        let z = logsumexp(&raw);
        if !z.is_finite() {
            return Err(Error::Invariant(format!(
                "log normalizer is {z}; no candidate carries posterior mass"
            )));
        }
        let log_weights: Vec<f64> = raw.iter().map(|l| l - z).collect();
        let weights = log_weights.iter().map(|l| l.exp()).collect();
        Ok(Self {
            weights,
            log_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the largest weight (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

/// Averages the per-prefix posteriors `softmax(log π + S_l)` over the
/// prefixes `l`, where `S_l` is produced by `step` for each observation.
fn cesaro_mixture(
    log_prior: &[f64],
    points: std::ops::Range<usize>,
    mut log_lik: impl FnMut(usize, usize) -> f64,
) -> Result<WeightVector> {
    let n_cand = log_prior.len();
    let count = points.len();
    if count == 0 {
        return Err(Error::Domain("no observations to mix over".into()));
    }
    let mut running: Vec<f64> = log_prior.to_vec();
    let mut acc = vec![f64::NEG_INFINITY; n_cand];
    for i in points {
        for (k, r) in running.iter_mut().enumerate() {
            *r += log_lik(k, i);
        }
        let z = logsumexp(&running);
        if !z.is_finite() {
            return Err(Error::Invariant("all posterior mass vanished".into()));
        }
        for (a, r) in acc.iter_mut().zip(&running) {
            *a = log_add_exp(*a, r - z);
        }
    }
    let ln_count = (count as f64).ln();
    WeightVector::from_log_weights(acc.into_iter().map(|a| a - ln_count).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDensity {
    Gaussian,
}

/// Settings for ARM. Only the Gaussian error density is supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub noise_density: NoiseDensity,
    /// With a known σ the variance step and the data split are skipped.
    pub sigma_known: Option<f64>,
    /// Size `n₁` of the variance-estimation part; `⌈n/2⌉` when absent.
    pub split: Option<usize>,
}

impl ArmConfig {
    pub fn new(sigma_lo: f64, sigma_hi: f64) -> Result<Self> {
        if !(sigma_lo > 0.0 && sigma_lo <= sigma_hi && sigma_hi.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < σ_lo ≤ σ_hi < ∞, got [{sigma_lo}, {sigma_hi}]"
            )));
        }
        Ok(Self {
            sigma_lo,
            sigma_hi,
            noise_density: NoiseDensity::Gaussian,
            sigma_known: None,
            split: None,
        })
    }

    pub fn known_sigma(sigma: f64) -> Result<Self> {
        let mut cfg = Self::new(sigma, sigma)?;
        cfg.sigma_known = Some(sigma);
        Ok(cfg)
    }
}

fn gaussian_log_density(residual: f64, sigma: f64) -> f64 {
    let z = residual / sigma;
    -0.5 * (LN_2PI + z * z) - sigma.ln()
}

/// ARM weights for the candidates given responses `y` at the same points.
pub fn arm_aggregate(candidates: &CandidateSet, y: &[f64], config: &ArmConfig) -> Result<WeightVector> {
    candidates.check_response(y)?;
    let n = y.len();
    let preds = candidates.predictions();
    let log_prior = candidates.log_priors();

    if let Some(sigma) = config.sigma_known {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("known σ must be positive, got {sigma}")));
        }
        return cesaro_mixture(&log_prior, 0..n, |k, i| {
            gaussian_log_density(y[i] - preds[(k, i)], sigma)
        });
    }

    if n < 2 {
        return Err(Error::Domain("ARM with data splitting needs n ≥ 2".into()));
    }
    let n1 = config.split.unwrap_or(n.div_ceil(2));
    if n1 < 1 || n1 > n - 1 {
        return Err(Error::Domain(format!("split n₁ = {n1} must lie in [1, {}]", n - 1)));
    }
    let (lo2, hi2) = (config.sigma_lo.powi(2), config.sigma_hi.powi(2));
    let sigmas: Vec<f64> = (0..candidates.len())
        .map(|k| {
            let s2 = (0..n1).map(|i| (y[i] - preds[(k, i)]).powi(2)).sum::<f64>() / n1 as f64;
            s2.clamp(lo2, hi2).sqrt()
        })
        .collect();
    cesaro_mixture(&log_prior, n1..n, |k, i| {
        gaussian_log_density(y[i] - preds[(k, i)], sigmas[k])
    })
}

/// Constants for Catoni's progressive mixture.
///
/// `u_alpha` bounds `E exp(α|ε|)` and `v_alpha` bounds
/// `E[ε² exp(α|ε|)] / E exp(α|ε|)`; `sup_bound` is the sup-norm bound `L`
/// on the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatoniConfig {
    pub alpha: f64,
    pub u_alpha: f64,
    pub v_alpha: f64,
    pub sup_bound: f64,
}

impl CatoniConfig {
    pub fn new(alpha: f64, u_alpha: f64, v_alpha: f64, sup_bound: f64) -> Result<Self> {
        let cfg = Self {
            alpha,
            u_alpha,
            v_alpha,
            sup_bound,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Exact moment constants for `N(0, σ²)` noise.
    pub fn gaussian(alpha: f64, sigma: f64, sup_bound: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("σ must be positive, got {sigma}")));
        }
        let (u, v) = gaussian_exp_moments(alpha, sigma);
        Self::new(alpha, u, v, sup_bound)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha.is_finite()
            && self.u_alpha >= 1.0
            && self.u_alpha.is_finite()
            && self.v_alpha > 0.0
            && self.v_alpha.is_finite()
            && self.sup_bound > 0.0
            && self.sup_bound.is_finite();
        if !ok || self.lambda() <= 0.0 {
            return Err(Error::Config(format!(
                "invalid Catoni constants α={}, U={}, V={}, L={}",
                self.alpha, self.u_alpha, self.v_alpha, self.sup_bound
            )));
        }
        Ok(())
    }

    /// `λ_C = min(α/(2L), (U_α(17L² + 3.4V_α))^{-1})`.
    pub fn lambda(&self) -> f64 {
        let l = self.sup_bound;
        (self.alpha / (2.0 * l)).min(1.0 / (self.u_alpha * (17.0 * l * l + 3.4 * self.v_alpha)))
    }
}

/// `(E e^{α|ε|}, E[ε² e^{α|ε|}] / E e^{α|ε|})` for `ε ~ N(0, σ²)` by
/// composite Simpson quadrature on `[0, 12σ + 2ασ²]`.
fn gaussian_exp_moments(alpha: f64, sigma: f64) -> (f64, f64) {
    let upper = 12.0 * sigma + 2.0 * alpha * sigma * sigma;
    let steps = 20_000;
    let h = upper / steps as f64;
    let dens = |x: f64| {
        2.0 * (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let (mut m0, mut m2) = (0.0, 0.0);
    for i in 0..=steps {
        let x = i as f64 * h;
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let g = dens(x) * (alpha * x).exp();
        m0 += w * g;
        m2 += w * g * x * x;
    }
    m0 *= h / 3.0;
    m2 *= h / 3.0;
    (m0, m2 / m0)
}

/// Catoni weights `W_k = (1/n) Σ_l π_k Π_{i≤l} q_k / Σ_j π_j Π_{i≤l} q_j`.
pub fn catoni_aggregate(candidates: &CandidateSet, y: &[f64], config: &CatoniConfig) -> Result<WeightVector> {
    config.validate()?;
    candidates.check_response(y)?;
    let lambda = config.lambda();
    let log_norm = 0.5 * (lambda.ln() - LN_2PI);
    let preds = candidates.predictions();
    cesaro_mixture(&candidates.log_priors(), 0..y.len(), |k, i| {
        let r = y[i] - preds[(k, i)];
        log_norm - 0.5 * lambda * r * r
    })
}

/// Mixed least-squares output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlsResult {
    pub weights: WeightVector,
    pub prediction: Vec<f64>,
    /// `R̂_J = RSS_J + 2 r_J σ² − n σ²` per model.
    pub risk_estimates: Vec<f64>,
}

/// `R̂_J = n||Y − Ŷ_J||²_n + 2 r_J σ² − n σ²`.
pub fn unbiased_risk_estimate(fit: &FitResult, n: usize, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    fit.rss + 2.0 * fit.rank as f64 * s2 - n as f64 * s2
}

/// Mixes subset fits with weights `π_J exp(−R̂_J / 4σ²)`. The models'
/// priors are used as `π_J`.
pub fn mls_aggregate(models: &[SubsetModel], fits: &[FitResult], sigma: Option<f64>) -> Result<MlsResult> {
    let sigma = sigma.ok_or_else(|| {
        Error::Config("mixed least squares needs a known σ; use the ABC′ criterion instead".into())
    })?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("σ must be positive, got {sigma}")));
    }
    if models.is_empty() || models.len() != fits.len() {
        return Err(Error::Data(format!(
            "{} models and {} fits",
            models.len(),
            fits.len()
        )));
    }
    let n = fits[0].projection.len();
    if fits.iter().any(|f| f.projection.len() != n) {
        return Err(Error::Data("fits have inconsistent lengths".into()));
    }
    let risk_estimates: Vec<f64> = fits
        .iter()
        .map(|f| unbiased_risk_estimate(f, n, sigma))
        .collect();
    let scale = 4.0 * sigma * sigma;
    let raw: Vec<f64> = models
        .iter()
        .zip(&risk_estimates)
        .map(|(m, r)| m.prior.ln() - r / scale)
        .collect();
    let weights = WeightVector::from_log_weights(raw)?;
    let mut prediction = vec![0.0; n];
    for (w, f) in weights.weights.iter().zip(fits) {
        if *w == 0.0 {
            continue;
        }
        for (p, v) in prediction.iter_mut().zip(&f.projection) {
            *p += w * v;
        }
    }
    Ok(MlsResult {
        weights,
        prediction,
        risk_estimates,
    })
}
