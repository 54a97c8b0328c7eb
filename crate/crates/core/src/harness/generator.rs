use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RNG stream reserved for quantities shared by all replicates.
const SHARED_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    /// A user-supplied design, row-major; `n` must equal the row count.
    Fixed { rows: Vec<Vec<f64>> },
    /// `m` orthogonal columns with `‖x_j‖²_n = 1`, drawn once from the seed.
    FixedOrthonormal { m: usize },
    /// Rows drawn iid with independent `U(−1, 1)` entries.
    RandomUniform { m: usize },
    /// Rows of independent Rademacher signs: an orthonormal system with sup
    /// norm 1.
    RandomOrthonormalBasis { m: usize },
}

impl DesignKind {
    pub fn dict_size(&self) -> usize {
        match self {
            DesignKind::Fixed { rows } => rows.first().map_or(0, |r| r.len()),
            DesignKind::FixedOrthonormal { m }
            | DesignKind::RandomUniform { m }
            | DesignKind::RandomOrthonormalBasis { m } => *m,
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, DesignKind::Fixed { .. } | DesignKind::FixedOrthonormal { .. })
    }

    /// Same kind with a different dictionary size. User-supplied designs
    /// cannot be resized.
    pub fn with_dict_size(&self, m: usize) -> Result<Self> {
        Ok(match self {
            DesignKind::Fixed { .. } => {
                return Err(Error::Config("a user-supplied design cannot be resized".into()))
            }
            DesignKind::FixedOrthonormal { .. } => DesignKind::FixedOrthonormal { m },
            DesignKind::RandomUniform { .. } => DesignKind::RandomUniform { m },
            DesignKind::RandomOrthonormalBasis { .. } => DesignKind::RandomOrthonormalBasis { m },
        })
    }
}

/// Coefficients `θ₀` of the regression function on the dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    /// Explicit coefficients, zero-padded to the dictionary size.
    Coefficients { theta: Vec<f64> },
    /// `θ_j = amplitude` for the first `k` terms.
    Sparse { k: usize, amplitude: f64 },
    /// `θ_j = t/M` for every term: a dense point of the ℓ1 ball of radius `t`.
    Flat { t: f64 },
}

impl TruthSpec {
    pub fn theta(&self, m: usize) -> Result<Vec<f64>> {
        let theta = match self {
            TruthSpec::Coefficients { theta } => {
                if theta.len() > m {
                    return Err(Error::Config(format!(
                        "{} coefficients for a dictionary of size {m}",
                        theta.len()
                    )));
                }
                let mut v = theta.clone();
                v.resize(m, 0.0);
                v
            }
            TruthSpec::Sparse { k, amplitude } => {
                if *k > m {
                    return Err(Error::Config(format!("sparsity {k} exceeds dictionary size {m}")));
                }
                (0..m).map(|j| if j < *k { *amplitude } else { 0.0 }).collect()
            }
            TruthSpec::Flat { t } => vec![t / m as f64; m],
        };
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("truth coefficients must be finite".into()));
        }
        Ok(theta)
    }
}

/// Regression data `Y_i = f₀(X_i) + ε_i` with Gaussian `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub design: DesignKind,
    pub truth: TruthSpec,
    /// Coefficient of a unit-norm component of `f₀` outside the span of the
    /// dictionary.
    #[serde(default)]
    pub extra: f64,
    pub sigma: f64,
    #[serde(default)]
    pub sup_bound: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// Noiseless `f₀(X_i)`.
    pub f0: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Gaussian matrix orthonormalized by QR and rescaled so every column has
/// `‖x_j‖²_n = 1`. Needs `m ≤ n`.
pub fn orthonormal_design(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    assert!(m <= n, "orthonormal design needs m ≤ n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q() * (n as f64).sqrt()
}

fn fixed_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 {
        return Err(Error::Data("design is empty".into()));
    }
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Data("design rows have unequal lengths".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("design contains non-finite entries".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Unit-`‖·‖_n` vector orthogonal to the columns of `x`.
fn orthogonal_unit(x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = x.nrows();
    let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = crate::selection::column_space_basis(x);
    let resid = &g - &u * u.tr_mul(&g);
    let norm = (resid.norm_squared() / n as f64).sqrt();
    if norm < 1e-8 {
        return Err(Error::Config(
            "the design spans every direction; no out-of-span component exists".into(),
        ));
    }
    Ok(resid.iter().map(|v| v / norm).collect())
}

impl GeneratorSpec {
    pub fn dict_size(&self) -> usize {
        self.design.dict_size()
    }

    pub fn theta(&self) -> Result<Vec<f64>> {
        self.truth.theta(self.dict_size())
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("σ must be finite and nonnegative, got {}", self.sigma)));
        }
        if !self.extra.is_finite() {
            return Err(Error::Config("extra component must be finite".into()));
        }
        if let Some(l) = self.sup_bound {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("sup bound must be positive, got {l}")));
            }
        }
        let m = self.dict_size();
        if m == 0 {
            return Err(Error::Config("dictionary size must be ≥ 1".into()));
        }
        if let DesignKind::RandomOrthonormalBasis { m } = self.design {
            if m > 64 {
                return Err(Error::Config("sign features support at most 64 columns".into()));
            }
            if self.extra != 0.0 && m < 2 {
                return Err(Error::Config("the out-of-span sign product needs m ≥ 2".into()));
            }
        }
        Ok(())
    }

    /// Fixes everything shared across replicates at sample size `n`.
    pub fn prepare(&self, n: usize) -> Result<PreparedGenerator> {
        self.validate()?;
        if n < 2 {
            return Err(Error::Domain(format!("sample size must be ≥ 2, got {n}")));
        }
        let theta = self.theta()?;
        let mut shared = ChaCha8Rng::seed_from_u64(self.seed);
        shared.set_stream(SHARED_STREAM);
        let fixed = match &self.design {
            DesignKind::Fixed { rows } => {
                let x = fixed_rows(rows)?;
                if x.nrows() != n {
                    return Err(Error::Data(format!("design has {} rows but n = {n}", x.nrows())));
                }
                Some(x)
            }
            DesignKind::FixedOrthonormal { m } => {
                if *m > n {
                    return Err(Error::Config(format!("orthonormal design needs M ≤ n, got M = {m}, n = {n}")));
                }
                let design_seed: u64 = shared.random();
                Some(orthonormal_design(n, *m, design_seed))
            }
            _ => None,
        };
        let fixed = match fixed {
            Some(x) => {
                let mut f0: Vec<f64> = (x.clone() * DVector::from_column_slice(&theta)).as_slice().to_vec();
                if self.extra != 0.0 {
                    let u = orthogonal_unit(&x, &mut shared)?;
                    for (f, v) in f0.iter_mut().zip(u) {
                        *f += self.extra * v;
                    }
                }
                Some((x, f0))
            }
            None => None,
        };
        Ok(PreparedGenerator {
            spec: self.clone(),
            n,
            theta,
            fixed,
        })
    }
}

/// A generator with its fixed design (if any) materialized.
#[derive(Debug, Clone)]
pub struct PreparedGenerator {
    spec: GeneratorSpec,
    n: usize,
    theta: Vec<f64>,
    fixed: Option<(DMatrix<f64>, Vec<f64>)>,
}

impl PreparedGenerator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn fixed_design(&self) -> Option<&DMatrix<f64>> {
        self.fixed.as_ref().map(|(x, _)| x)
    }

    pub fn replicate_rng(&self, replicate: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(replicate);
        rng
    }

    /// Draws `rows` design points (random designs only).
    pub fn draw_points(&self, rows: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = self.spec.dict_size();
        match self.spec.design {
            DesignKind::RandomUniform { .. } => DMatrix::from_fn(rows, m, |_, _| rng.random_range(-1.0..1.0)),
            DesignKind::RandomOrthonormalBasis { .. } => {
                let mut x = DMatrix::zeros(rows, m);
                for i in 0..rows {
                    let bits: u64 = rng.random();
                    for j in 0..m {
                        x[(i, j)] = if (bits >> j) & 1 == 1 { 1.0 } else { -1.0 };
                    }
                }
                x
            }
            _ => unreachable!("fixed designs are not redrawn"),
        }
    }

    /// `f₀` at the rows of a random-design sample.
    pub fn f0_at(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let lin: f64 = (0..x.ncols()).map(|j| x[(i, j)] * self.theta[j]).sum();
                let extra = match self.spec.design {
                    _ if self.spec.extra == 0.0 => 0.0,
                    DesignKind::RandomUniform { .. } => {
                        let u = x[(i, 0)];
                        5f64.sqrt() * (3.0 * u * u - 1.0) / 2.0
                    }
                    DesignKind::RandomOrthonormalBasis { .. } => x[(i, 0)] * x[(i, 1)],
                    _ => 0.0,
                };
                lin + self.spec.extra * extra
            })
            .collect()
    }

    /// Training sample for `replicate`, leaving the RNG positioned after it
    /// so a fresh test sample can follow.
    pub fn draw_with(&self, rng: &mut ChaCha8Rng) -> Dataset {
        let (x, f0) = match &self.fixed {
            Some((x, f0)) => (x.clone(), f0.clone()),
            None => {
                let x = self.draw_points(self.n, rng);
                let f0 = self.f0_at(&x);
                (x, f0)
            }
        };
        let sigma = self.spec.sigma;
        let y = f0
            .iter()
            .map(|f| {
                let e: f64 = rng.sample(StandardNormal);
                f + sigma * e
            })
            .collect();
        Dataset { x, y, f0 }
    }

    pub fn draw(&self, replicate: u64) -> Dataset {
        self.draw_with(&mut self.replicate_rng(replicate))
    }
}

/// One dataset, a deterministic function of `(spec.seed, replicate)`.
pub fn generate(spec: &GeneratorSpec, n: usize, replicate: u64) -> Result<Dataset> {
    Ok(spec.prepare(n)?.draw(replicate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(design: DesignKind, sigma: f64) -> GeneratorSpec {
        GeneratorSpec {
            design,
            truth: TruthSpec::Coefficients { theta: vec![1.0, -0.5] },
            extra: 0.0,
            sigma,
            sup_bound: None,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_data_is_exact() {
        for d in [
            DesignKind::FixedOrthonormal { m: 3 },
            DesignKind::RandomUniform { m: 3 },
            DesignKind::RandomOrthonormalBasis { m: 3 },
        ] {
            let ds = generate(&spec(d, 0.0), 20, 0).unwrap();
            assert_eq!(ds.y, ds.f0);
        }
    }

    #[test]
    fn replicates_are_reproducible() {
        let s = spec(DesignKind::RandomUniform { m: 4 }, 1.0);
        let a = generate(&s, 30, 5).unwrap();
        let b = generate(&s, 30, 5).unwrap();
        assert_eq!(a, b);
        let c = generate(&s, 30, 6).unwrap();
        assert_ne!(a.y, c.y);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn fixed_design_is_shared_across_replicates() {
        let s = spec(DesignKind::FixedOrthonormal { m: 4 }, 1.0);
        let a = generate(&s, 30, 1).unwrap();
        let b = generate(&s, 30, 2).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.f0, b.f0);
        assert_ne!(a.y, b.y);
        let gram = a.x.transpose() * &a.x / 30.0;
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-12);
    }

    #[test]
    fn sign_features_have_identity_gram() {
        let n = 10_000;
        let s = spec(DesignKind::RandomOrthonormalBasis { m: 6 }, 1.0);
        let ds = generate(&s, n, 0).unwrap();
        let gram = ds.x.transpose() * &ds.x / n as f64;
        let tol = 3.0 / (n as f64).sqrt();
        assert!((gram - DMatrix::identity(6, 6)).abs().max() < tol);
        assert!(ds.x.iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn out_of_span_component() {
        let mut s = spec(DesignKind::FixedOrthonormal { m: 3 }, 0.0);
        s.extra = 0.7;
        let prep = s.prepare(25).unwrap();
        let ds = prep.draw(0);
        let x = prep.fixed_design().unwrap();
        let lin = x * DVector::from_column_slice(prep.theta());
        let resid: Vec<f64> = ds.f0.iter().zip(lin.iter()).map(|(a, b)| a - b).collect();
        let norm2 = resid.iter().map(|v| v * v).sum::<f64>() / 25.0;
        assert!((norm2 - 0.49).abs() < 1e-10);
        for j in 0..3 {
            let dot: f64 = (0..25).map(|i| x[(i, j)] * resid[i]).sum();
            assert!(dot.abs() < 1e-9);
        }

        let mut s = spec(DesignKind::RandomUniform { m: 2 }, 0.0);
        s.extra = 1.0;
        let prep = s.prepare(200_000).unwrap();
        let ds = prep.draw(0);
        let g: Vec<f64> = ds.f0.iter().zip(0..).map(|(f, i)| f - ds.x[(i, 0)] + 0.5 * ds.x[(i, 1)]).collect();
        let second = g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
        assert!((second - 1.0).abs() < 0.02, "{second}");
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(DesignKind::FixedOrthonormal { m: 3 }, -1.0);
        assert!(s.prepare(10).is_err());
        s.sigma = 1.0;
        assert!(s.prepare(2).is_err());
        let s = GeneratorSpec {
            truth: TruthSpec::Sparse { k: 5, amplitude: 1.0 },
            ..spec(DesignKind::RandomUniform { m: 3 }, 1.0)
        };
        assert!(s.prepare(10).is_err());
        let s = spec(DesignKind::Fixed { rows: vec![vec![1.0, 2.0], vec![3.0]] }, 1.0);
        assert!(matches!(s.prepare(2), Err(Error::Data(_))));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let s = spec(DesignKind::RandomOrthonormalBasis { m: 5 }, 0.5);
        let txt = serde_json::to_string(&s).unwrap();
        let back: GeneratorSpec = serde_json::from_str(&txt).unwrap();
        assert_eq!(s, back);
    }
}
