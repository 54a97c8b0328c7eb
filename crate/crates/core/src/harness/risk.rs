use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::mean_square_diff;
use crate::rates::{phi_rate, psi_rate, ProblemDims, SparsityBudget};
use crate::selection::{design_rank, enumerate_models, ModelPurpose, ProjectionSet, DEFAULT_ENUMERATION_CAP};

pub use super::estimators::Estimator;
use super::generator::{DesignKind, GeneratorSpec, PreparedGenerator};
use super::oracle::resolvability_from_set;

/// Serializable sparsity budget; `q = 0` means hard sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub q: f64,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
}

impl BudgetSpec {
    pub fn to_budget(&self) -> Result<SparsityBudget> {
        match (self.q == 0.0, self.t, self.k) {
            (true, _, Some(k)) => SparsityBudget::l0(k),
            (false, Some(t), None) => SparsityBudget::lq(self.q, t),
            (false, Some(t), Some(k)) => SparsityBudget::joint(self.q, t, k),
            _ => Err(Error::Config(
                "budget needs k when q = 0 and t when q > 0".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskOptions {
    pub replicates: usize,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    /// Thread count for the replicate loop; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    /// Penalty multiplier for the resolvability oracle (fixed designs).
    #[serde(default)]
    pub oracle_lambda: Option<f64>,
    /// For sign-feature designs and linear fits, use the exact
    /// `‖f̂ − f₀‖²` from coefficient differences instead of a test sample.
    #[serde(default)]
    pub closed_form: bool,
}

fn default_test_points() -> usize {
    10_000
}

impl RiskOptions {
    pub fn new(replicates: usize) -> Self {
        Self {
            replicates,
            test_points: default_test_points(),
            workers: None,
            budget: None,
            oracle_lambda: None,
            closed_form: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub estimator_id: String,
    pub design: String,
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    pub failures: usize,
    pub mean_risk: f64,
    pub std_err: f64,
    pub oracle: Option<f64>,
    pub rate_prediction: Option<f64>,
    pub ratio: Option<f64>,
}

/// A report together with each replicate's loss (`None` where the fit
/// failed).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRun {
    pub report: RiskReport,
    pub per_replicate: Vec<Option<f64>>,
}

fn replicate_loss(prep: &PreparedGenerator, estimator: &dyn Estimator, replicate: u64, opts: &RiskOptions) -> Result<f64> {
    let mut rng = prep.replicate_rng(replicate);
    let data = prep.draw_with(&mut rng);
    let fit = estimator.fit(&data)?;
    if fit.fitted.len() != data.n() || fit.fitted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant("estimator returned malformed fitted values".into()));
    }
    let spec = prep.spec();
    if spec.design.is_fixed() {
        return Ok(mean_square_diff(&fit.fitted, &data.f0));
    }
    let predictor = fit
        .predictor
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} cannot predict at new design points", estimator.id())))?;
    if opts.closed_form && matches!(spec.design, DesignKind::RandomOrthonormalBasis { .. }) {
        if let Some((b0, beta)) = predictor.as_linear() {
            let coef: f64 = beta.iter().zip(prep.theta()).map(|(b, t)| (b - t).powi(2)).sum();
            return Ok(b0 * b0 + coef + spec.extra * spec.extra);
        }
    }
    let x = prep.draw_points(opts.test_points, &mut rng);
    let f0 = prep.f0_at(&x);
    Ok(mean_square_diff(&predictor.predict(&x), &f0))
}

fn summarize(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Monte Carlo estimate of the risk of `estimator` on data from `spec`.
pub fn estimate_risk(estimator: &dyn Estimator, spec: &GeneratorSpec, n: usize, opts: &RiskOptions) -> Result<RiskReport> {
    Ok(estimate_risk_detailed(estimator, spec, n, opts)?.report)
}

pub fn estimate_risk_detailed(
    estimator: &dyn Estimator,
    spec: &GeneratorSpec,
    n: usize,
    opts: &RiskOptions,
) -> Result<RiskRun> {
    if opts.replicates < 2 {
        return Err(Error::Config(format!("need at least 2 replicates, got {}", opts.replicates)));
    }
    if !spec.design.is_fixed() && opts.test_points == 0 {
        return Err(Error::Config("random designs need test_points ≥ 1".into()));
    }
    if opts.workers == Some(0) {
        return Err(Error::Config("workers must be ≥ 1".into()));
    }
    let budget = opts.budget.map(|b| b.to_budget()).transpose()?;
    let prep = spec.prepare(n)?;

    let run = || -> Vec<Result<f64>> {
        (0..opts.replicates as u64)
            .into_par_iter()
            .map(|r| replicate_loss(&prep, estimator, r, opts))
            .collect()
    };
    let results = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a pool of {w} workers: {e}")))?
            .install(run),
        None => run(),
    };

    let mut per_replicate = Vec::with_capacity(results.len());
    let mut failures = 0;
    let mut first_failure = None;
    for r in results {
        match r {
            Ok(v) => per_replicate.push(Some(v)),
            Err(e) => {
                failures += 1;
                if first_failure.is_none() {
                    first_failure = Some(e.to_string());
                }
                per_replicate.push(None);
            }
        }
    }
    if failures * 100 > opts.replicates || failures == opts.replicates {
        return Err(Error::Experiment {
            failures,
            replicates: opts.replicates,
            first: first_failure.unwrap_or_default(),
        });
    }
    let ok: Vec<f64> = per_replicate.iter().flatten().copied().collect();
    let (mean_risk, std_err) = summarize(&ok);

    let m = spec.dict_size();
    let oracle = match (prep.fixed_design(), opts.oracle_lambda) {
        (Some(x), Some(lambda)) if m <= DEFAULT_ENUMERATION_CAP => {
            let models = enumerate_models(m, n, ModelPurpose::Abc, design_rank(x))?;
            let set = ProjectionSet::new(x, models)?;
            let f0 = prep.draw(0).f0;
            Some(resolvability_from_set(&set, &f0, spec.sigma, lambda)?.value)
        }
        _ => None,
    };

    let rate_prediction = match budget {
        Some(b) if spec.sigma > 0.0 => {
            let dims = ProblemDims::new(n, m, spec.sigma)?;
            b.validate_for(&dims)?;
            Some(match prep.fixed_design() {
                Some(x) => phi_rate(&dims, &b, design_rank(x).max(1))?.value,
                None => psi_rate(&dims, &b).value,
            })
        }
        _ => None,
    };
    let ratio = rate_prediction.filter(|r| *r > 0.0).map(|r| mean_risk / r);

    Ok(RiskRun {
        report: RiskReport {
            estimator_id: estimator.id(),
            design: if spec.design.is_fixed() { "fixed" } else { "random" }.into(),
            n,
            m,
            replicates: opts.replicates,
            failures,
            mean_risk,
            std_err,
            oracle,
            rate_prediction,
            ratio,
        },
        per_replicate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::estimators::{FittedModel, LinearPiece, OlsEstimator, Predictor};
    use crate::harness::generator::{Dataset, TruthSpec};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Truth;
    impl Estimator for Truth {
        fn id(&self) -> String {
            "truth".into()
        }
        fn fit(&self, d: &Dataset) -> Result<FittedModel> {
            Ok(FittedModel {
                fitted: d.f0.clone(),
                predictor: None,
            })
        }
    }

    struct Zero;
    impl Estimator for Zero {
        fn id(&self) -> String {
            "zero".into()
        }
        fn fit(&self, d: &Dataset) -> Result<FittedModel> {
            Ok(FittedModel {
                fitted: vec![0.0; d.n()],
                predictor: Some(Predictor::single(LinearPiece {
                    intercept: 0.0,
                    beta: vec![0.0; d.x.ncols()],
                    clip: None,
                })),
            })
        }
    }

    struct Flaky(AtomicUsize, usize);
    impl Estimator for Flaky {
        fn id(&self) -> String {
            "flaky".into()
        }
        fn fit(&self, d: &Dataset) -> Result<FittedModel> {
            if self.0.fetch_add(1, Ordering::SeqCst) < self.1 {
                return Err(Error::Data("boom".into()));
            }
            Truth.fit(d)
        }
    }

    fn spec(design: DesignKind) -> GeneratorSpec {
        GeneratorSpec {
            design,
            truth: TruthSpec::Sparse { k: 1, amplitude: 1.0 },
            extra: 0.0,
            sigma: 1.0,
            sup_bound: None,
            seed: 5,
        }
    }

    #[test]
    fn truth_estimator_has_zero_risk() {
        let r = estimate_risk(&Truth, &spec(DesignKind::FixedOrthonormal { m: 3 }), 20, &RiskOptions::new(10)).unwrap();
        assert_eq!(r.mean_risk, 0.0);
        assert_eq!(r.std_err, 0.0);
    }

    #[test]
    fn zero_estimator_risk_is_signal_norm() {
        let mut opts = RiskOptions::new(20);
        opts.test_points = 20_000;
        let r = estimate_risk(&Zero, &spec(DesignKind::RandomUniform { m: 2 }), 10, &opts).unwrap();
        // ‖x₁‖² = 1/3 under U(−1, 1)
        assert!((r.mean_risk - 1.0 / 3.0).abs() < 0.01, "{}", r.mean_risk);
        let r = estimate_risk(&Zero, &spec(DesignKind::RandomOrthonormalBasis { m: 2 }), 10, &opts).unwrap();
        assert!((r.mean_risk - 1.0).abs() < 1e-12);
    }

    #[test]
    fn std_err_definition() {
        let run = estimate_risk_detailed(&OlsEstimator, &spec(DesignKind::FixedOrthonormal { m: 3 }), 30, &RiskOptions::new(50)).unwrap();
        let v: Vec<f64> = run.per_replicate.iter().map(|x| x.unwrap()).collect();
        let mean = v.iter().sum::<f64>() / 50.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
        assert!((run.report.std_err - sd / 50f64.sqrt()).abs() < 1e-12);
        // OLS on 3 orthonormal columns: E ASE = 3σ²/n
        assert!((run.report.mean_risk - 0.1).abs() < 4.0 * run.report.std_err);
    }

    #[test]
    fn failures_are_counted_and_bounded() {
        let s = spec(DesignKind::FixedOrthonormal { m: 2 });
        let r = estimate_risk(&Flaky(AtomicUsize::new(0), 1), &s, 10, &RiskOptions::new(200)).unwrap();
        assert_eq!(r.failures, 1);
        let err = estimate_risk(&Flaky(AtomicUsize::new(0), 3), &s, 10, &RiskOptions::new(200)).unwrap_err();
        assert!(matches!(err, Error::Experiment { failures: 3, .. }));
    }

    #[test]
    fn reports_identical_across_worker_counts() {
        let s = spec(DesignKind::RandomUniform { m: 3 });
        let mut opts = RiskOptions::new(40);
        opts.test_points = 500;
        opts.workers = Some(1);
        let a = serde_json::to_string(&estimate_risk(&OlsEstimator, &s, 25, &opts).unwrap()).unwrap();
        opts.workers = Some(4);
        let b = serde_json::to_string(&estimate_risk(&OlsEstimator, &s, 25, &opts).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn closed_form_agrees_with_test_sample() {
        let s = spec(DesignKind::RandomOrthonormalBasis { m: 4 });
        let mut opts = RiskOptions::new(200);
        opts.test_points = 4000;
        let a = estimate_risk(&OlsEstimator, &s, 40, &opts).unwrap();
        opts.closed_form = true;
        let b = estimate_risk(&OlsEstimator, &s, 40, &opts).unwrap();
        let se = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
        assert!((a.mean_risk - b.mean_risk).abs() < 3.0 * se + 1e-3);
    }

    #[test]
    fn doubling_test_points_is_consistent() {
        let s = spec(DesignKind::RandomUniform { m: 3 });
        let mut opts = RiskOptions::new(100);
        opts.test_points = 2000;
        let a = estimate_risk(&OlsEstimator, &s, 30, &opts).unwrap();
        opts.test_points = 4000;
        let b = estimate_risk(&OlsEstimator, &s, 30, &opts).unwrap();
        let se = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
        assert!((a.mean_risk - b.mean_risk).abs() < 3.0 * se);
    }

    #[test]
    fn rate_and_oracle_columns() {
        let s = spec(DesignKind::FixedOrthonormal { m: 4 });
        let mut opts = RiskOptions::new(10);
        opts.budget = Some(BudgetSpec { q: 0.0, t: None, k: Some(1) });
        opts.oracle_lambda = Some(4.0);
        let r = estimate_risk(&OlsEstimator, &s, 50, &opts).unwrap();
        let phi = r.rate_prediction.unwrap();
        // σ²k(1+log(M/k))/n ∧ σ²r/n
        assert!((phi - (1.0 + 4f64.ln()) / 50.0).abs() < 1e-12);
        assert!(r.ratio.unwrap() > 0.0);
        assert!(r.oracle.unwrap() > 0.0);
    }

    #[test]
    fn too_few_replicates() {
        assert!(estimate_risk(&Truth, &spec(DesignKind::FixedOrthonormal { m: 2 }), 10, &RiskOptions::new(1)).is_err());
    }
}
