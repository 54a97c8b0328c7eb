use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{arm_aggregate, catoni_aggregate, ArmConfig, CandidateSet, CatoniConfig, WeightVector};
use crate::numeric::ln_binomial;
use crate::selection::{for_each_combination, ProjectionSet, SubsetModel, DEFAULT_ENUMERATION_CAP};

use super::estimators::{Estimator, FittedModel, LinearPiece, Predictor};
use super::generator::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregator {
    Catoni(CatoniConfig),
    Arm(ArmConfig),
}

/// Split-fit-aggregate over all subsets of the dictionary plus the zero
/// function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    /// Prior mass on the zero function.
    pub p0: f64,
    /// Candidates are clipped to `[−L, L]`.
    pub sup_bound: f64,
    pub aggregator: Aggregator,
    /// Size of the fitting part; `⌈n/2⌉` when absent.
    pub split: Option<usize>,
}

impl StrategyConfig {
    pub fn new(p0: f64, sup_bound: f64, aggregator: Aggregator, split: Option<usize>) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::Config(format!("p0 must lie in (0, 1), got {p0}")));
        }
        if !(sup_bound > 0.0 && sup_bound.is_finite()) {
            return Err(Error::Config(format!("sup bound must be positive, got {sup_bound}")));
        }
        Ok(Self {
            p0,
            sup_bound,
            aggregator,
            split,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniversalFit {
    pub predictor: Predictor,
    /// Aggregated predictor at all `n` training points.
    pub fitted: Vec<f64>,
    pub weights: WeightVector,
    pub labels: Vec<String>,
    pub n1: usize,
}

fn rows(x: &DMatrix<f64>, range: std::ops::Range<usize>) -> DMatrix<f64> {
    x.rows(range.start, range.len()).into_owned()
}

/// Fits least squares on every subset using the first `n₁` points, clips,
/// and aggregates the candidates on the remaining points.
pub fn universal_aggregate(data: &Dataset, config: &StrategyConfig) -> Result<UniversalFit> {
    let n = data.n();
    let m = data.x.ncols();
    if m == 0 {
        return Err(Error::Data("design has no columns".into()));
    }
    if m > DEFAULT_ENUMERATION_CAP {
        return Err(Error::Capacity {
            m,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let n1 = config.split.unwrap_or(n.div_ceil(2));
    if n1 < 2 || n1 + 1 > n {
        return Err(Error::Domain(format!("split n₁ = {n1} must lie in [2, {}]", n.saturating_sub(1))));
    }
    let top = m.min(n);
    let mut models = Vec::new();
    let mut priors = vec![config.p0];
    for size in 1..=top {
        let prior = (1.0 - config.p0) / top as f64 * (-ln_binomial(m, size)).exp();
        for_each_combination(m, size, |ix| {
            models.push(SubsetModel::subset(ix.to_vec(), -prior.ln()));
            priors.push(prior);
        });
    }

    let x1 = rows(&data.x, 0..n1);
    let set = ProjectionSet::new(&x1, models)?;
    let fits = set.fit_all(&data.y[..n1])?;
    let mut pieces = vec![LinearPiece {
        intercept: 0.0,
        beta: vec![0.0; m],
        clip: Some(config.sup_bound),
    }];
    let mut labels = vec!["zero".to_string()];
    for (md, fit) in set.models().iter().zip(&fits) {
        let mut p = LinearPiece::from_model(md, &fit.coefficients, m).expect("subset models are linear");
        p.clip = Some(config.sup_bound);
        pieces.push(p);
        labels.push(md.label());
    }

    let x2 = rows(&data.x, n1..n);
    let preds = DMatrix::from_fn(pieces.len(), n - n1, |k, i| pieces[k].eval_row(&x2, i));
    let candidates = CandidateSet::new(preds, priors, labels.clone())?;
    let y2 = &data.y[n1..];
    let weights = match &config.aggregator {
        Aggregator::Catoni(c) => catoni_aggregate(&candidates, y2, c)?,
        Aggregator::Arm(c) => arm_aggregate(&candidates, y2, c)?,
    };
    let predictor = Predictor {
        pieces: weights.weights.iter().copied().zip(pieces).collect(),
    };
    let fitted = predictor.predict(&data.x);
    Ok(UniversalFit {
        predictor,
        fitted,
        weights,
        labels,
        n1,
    })
}

#[derive(Debug, Clone)]
pub struct UniversalEstimator {
    config: StrategyConfig,
}

impl UniversalEstimator {
    pub fn new(config: StrategyConfig) -> Self {
        Self { config }
    }
}

impl Estimator for UniversalEstimator {
    fn id(&self) -> String {
        match self.config.aggregator {
            Aggregator::Catoni(_) => "universal_catoni".into(),
            Aggregator::Arm(_) => "universal_arm".into(),
        }
    }

    fn fit(&self, data: &Dataset) -> Result<FittedModel> {
        let u = universal_aggregate(data, &self.config)?;
        Ok(FittedModel {
            fitted: u.fitted,
            predictor: Some(u.predictor),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generator::{DesignKind, GeneratorSpec, TruthSpec};
    use crate::numeric::mean_square_diff;

    fn spec(sigma: f64) -> GeneratorSpec {
        GeneratorSpec {
            design: DesignKind::RandomOrthonormalBasis { m: 4 },
            truth: TruthSpec::Sparse { k: 1, amplitude: 1.0 },
            extra: 0.0,
            sigma,
            sup_bound: Some(1.0),
            seed: 12,
        }
    }

    fn catoni(sigma: f64) -> Aggregator {
        Aggregator::Catoni(CatoniConfig::gaussian(0.1, sigma, 1.0).unwrap())
    }

    #[test]
    fn odd_sample_split() {
        let d = spec(0.5).prepare(11).unwrap().draw(0);
        let u = universal_aggregate(&d, &StrategyConfig::new(0.1, 1.0, catoni(0.5), None).unwrap()).unwrap();
        assert_eq!(u.n1, 6);
        assert_eq!(u.labels.len(), 1 + 15);
        assert!((u.weights.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(u.fitted.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn heavy_null_prior_gives_null_predictor() {
        let d = spec(0.5).prepare(40).unwrap().draw(1);
        let u = universal_aggregate(&d, &StrategyConfig::new(1.0 - 1e-9, 1.0, catoni(0.5), None).unwrap()).unwrap();
        assert!(u.weights.weights[0] > 0.999);
        assert!(u.fitted.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn invalid_configs() {
        assert!(StrategyConfig::new(0.0, 1.0, catoni(1.0), None).is_err());
        assert!(StrategyConfig::new(0.5, -1.0, catoni(1.0), None).is_err());
        let d = spec(0.5).prepare(10).unwrap().draw(0);
        let cfg = StrategyConfig::new(0.5, 1.0, catoni(1.0), Some(10)).unwrap();
        assert!(matches!(universal_aggregate(&d, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn catoni_mixture_meets_its_oracle_bound() {
        // E risk ≤ min_k (risk_k + log(1/π_k) / (λ n₂)), averaged over seeds
        let prep = spec(0.2).prepare(120).unwrap();
        let agg = catoni(0.2);
        let lam = match agg {
            Aggregator::Catoni(c) => c.lambda(),
            _ => unreachable!(),
        };
        let cfg = StrategyConfig::new(0.05, 1.0, agg, None).unwrap();
        let mut diffs = Vec::new();
        for seed in 0..30 {
            let mut rng = prep.replicate_rng(seed);
            let d = prep.draw_with(&mut rng);
            let u = universal_aggregate(&d, &cfg).unwrap();
            let xt = prep.draw_points(4000, &mut rng);
            let f0 = prep.f0_at(&xt);
            let risk = mean_square_diff(&u.predictor.predict(&xt), &f0);
            let n2 = (d.n() - u.n1) as f64;
            let priors: Vec<f64> = {
                let top = 4;
                let mut p = vec![0.05];
                for size in 1..=top {
                    let v = 0.95 / top as f64 * (-ln_binomial(4, size)).exp();
                    let count = (ln_binomial(4, size).exp()).round() as usize;
                    p.extend(std::iter::repeat_n(v, count));
                }
                p
            };
            let bound = u
                .predictor
                .pieces
                .iter()
                .zip(&priors)
                .map(|((_, piece), pi)| {
                    let r = mean_square_diff(&Predictor::single(piece.clone()).predict(&xt), &f0);
                    r + (1.0 / pi).ln() / (lam * n2)
                })
                .fold(f64::INFINITY, f64::min);
            diffs.push(risk - bound);
        }
        let k = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / k;
        let se = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
        assert!(mean <= 3.0 * se, "mean excess {mean}, se {se}");
    }
}
