//! Constructive sparse approximation inside ℓq-hulls.
//!
//! Given coefficients `c` with `||c||_q ≤ t`, the large entries (those above
//! `t·m^{-1/q}`, fewer than `m` of them) are kept exactly and the remaining
//! light part is replaced by the average of `m` i.i.d. random single-atom
//! functions whose mean is the light part. The result has at most `2m − 1`
//! nonzeros and, for some realization, squared error within
//! `2^{2/q−1} t² m^{1−2/q}` of the original combination. [`maurey_round`]
//! finds such a realization by rejection sampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::mean_square_diff;
use crate::rates::lq_norm;

/// Slack allowed when checking `||c||_q ≤ t` and column norms `≤ 1`.
const BUDGET_TOL: f64 = 1e-9;

pub const DEFAULT_MAX_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `||g||_n² = (1/n) Σ g(x_i)²` over the evaluation rows.
    Empirical,
    /// Rows are a sample from `P_X`; the same formula is a Monte Carlo
    /// estimate of `||g||²`.
    MonteCarlo,
}

/// Dictionary elements evaluated at a common set of points.
///
/// Rows are evaluation points, columns are dictionary elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    columns: DMatrix<f64>,
    col_norms: Vec<f64>,
    norm_kind: NormKind,
}

impl Dictionary {
    pub fn new(columns: DMatrix<f64>, norm_kind: NormKind) -> Result<Self> {
        if columns.nrows() == 0 || columns.ncols() == 0 {
            return Err(Error::Data("dictionary must have at least one row and one column".into()));
        }
        if columns.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("dictionary entries must be finite".into()));
        }
        let rows = columns.nrows() as f64;
        let col_norms = columns
            .column_iter()
            .map(|c| (c.norm_squared() / rows).sqrt())
            .collect();
        Ok(Self {
            columns,
            col_norms,
            norm_kind,
        })
    }

    /// `M` columns scaled so that each has unit empirical norm and they are
    /// mutually orthogonal: column `j` is `√M · e_j`.
    pub fn orthonormal(m: usize) -> Self {
        let scale = (m as f64).sqrt();
        Self::new(DMatrix::identity(m, m) * scale, NormKind::Empirical)
            .expect("identity dictionary is valid")
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }
    pub fn col_norms(&self) -> &[f64] {
        &self.col_norms
    }
    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }
    pub fn n_rows(&self) -> usize {
        self.columns.nrows()
    }
    pub fn size(&self) -> usize {
        self.columns.ncols()
    }

    /// Values of `Σ θ_j f_j` at the evaluation rows.
    pub fn evaluate(&self, theta: &[f64]) -> Vec<f64> {
        let v = &self.columns * DVector::from_column_slice(theta);
        v.as_slice().to_vec()
    }

    /// `||Σ θ_j f_j − target||²` in the dictionary's norm.
    pub fn squared_error(&self, theta: &[f64], target: &[f64]) -> f64 {
        mean_square_diff(&self.evaluate(theta), target)
    }
}

/// Output of [`threshold_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSplit {
    /// Indices with `|c_j| > t·m^{-1/q}`, increasing.
    pub heavy: Vec<usize>,
    /// Full-length coefficient vector with the heavy entries zeroed.
    pub light: Vec<f64>,
    pub light_l1: f64,
    pub threshold: f64,
    /// `D = t·m^{1−1/q}`, the guaranteed bound on `light_l1`.
    pub light_budget: f64,
}

/// Splits `c` into the entries above `t·m^{-1/q}` and the rest.
pub fn threshold_split(c: &[f64], t: f64, m: usize, q: f64) -> Result<ThresholdSplit> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("rounding needs 0 < q ≤ 1, got {q}")));
    }
    if m == 0 {
        return Err(Error::Domain("m must be at least 1".into()));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("radius t must be positive, got {t}")));
    }
    let norm = lq_norm(c, q)?;
    if norm > t * (1.0 + BUDGET_TOL) + BUDGET_TOL {
        return Err(Error::Constraint { norm, radius: t });
    }
    let mf = m as f64;
    let threshold = t * mf.powf(-1.0 / q);
    let mut heavy = Vec::new();
    let mut light = c.to_vec();
    for (j, &cj) in c.iter().enumerate() {
        if cj.abs() > threshold {
            heavy.push(j);
            light[j] = 0.0;
        }
    }
    let light_l1 = light.iter().map(|x| x.abs()).sum();
    Ok(ThresholdSplit {
        heavy,
        light,
        light_l1,
        threshold,
        light_budget: t * mf.powf(1.0 - 1.0 / q),
    })
}

/// One draw of the rounded light part: the average of `m` i.i.d. atoms
/// `‖light‖₁·sign(c_j)·e_j`, atom `j` chosen with probability
/// `|c_j| / ‖light‖₁`. Its expectation is `light` and its ℓ1 norm equals
/// `‖light‖₁`.
pub fn sample_rounding<R: Rng + ?Sized>(light: &[f64], m: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; light.len()];
    let mass: f64 = light.iter().map(|x| x.abs()).sum();
    if mass == 0.0 || m == 0 {
        return out;
    }
    let support: Vec<usize> = (0..light.len()).filter(|&j| light[j] != 0.0).collect();
    let mut cdf = Vec::with_capacity(support.len());
    let mut acc = 0.0;
    for &j in &support {
        acc += light[j].abs() / mass;
        cdf.push(acc);
    }
    // renormalize so the last cumulative probability is exactly one
    let total = acc;
    for p in &mut cdf {
        *p /= total;
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    let atom = mass / m as f64;
    for _ in 0..m {
        let u: f64 = rng.random();
        let pos = cdf.partition_point(|&p| p <= u).min(support.len() - 1);
        let j = support[pos];
        out[j] += atom.copysign(light[j]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingConfig {
    pub t: f64,
    pub m: usize,
    pub q: f64,
    pub seed: u64,
    pub max_draws: usize,
    /// Reference squared error `d²(f₀; F_q(t))`. When absent the error of
    /// the unrounded combination `f_c` is used.
    pub reference: Option<f64>,
}

impl RoundingConfig {
    pub fn new(t: f64, m: usize, q: f64, seed: u64) -> Self {
        Self {
            t,
            m,
            q,
            seed,
            max_draws: DEFAULT_MAX_DRAWS,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseApproxResult {
    pub theta_m: Vec<f64>,
    pub l1_norm: f64,
    pub nonzeros: usize,
    pub squared_error: f64,
    /// `squared_error − reference`.
    pub achieved_excess: f64,
    /// `2^{2/q−1} t² m^{1−2/q}`.
    pub bound: f64,
    pub draws_used: usize,
}

/// The approximation bound `2^{2/q−1} t² m^{1−2/q}`.
pub fn approximation_bound(t: f64, m: usize, q: f64) -> f64 {
    2f64.powf(2.0 / q - 1.0) * t * t * (m as f64).powf(1.0 - 2.0 / q)
}

/// Finds a sparse coefficient vector whose combination is within the
/// approximation bound of `target`, relative to the reference error.
pub fn maurey_round(
    dict: &Dictionary,
    c: &[f64],
    target: &[f64],
    cfg: &RoundingConfig,
) -> Result<SparseApproxResult> {
    if c.len() != dict.size() {
        return Err(Error::Data(format!(
            "{} coefficients for a dictionary of size {}",
            c.len(),
            dict.size()
        )));
    }
    if target.len() != dict.n_rows() {
        return Err(Error::Data(format!(
            "target has {} values, dictionary has {} rows",
            target.len(),
            dict.n_rows()
        )));
    }
    if target.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("target values must be finite".into()));
    }
    if let Some(j) = dict.col_norms().iter().position(|&s| s > 1.0 + BUDGET_TOL) {
        return Err(Error::Domain(format!(
            "dictionary column {j} has norm {} > 1",
            dict.col_norms()[j]
        )));
    }
    if cfg.max_draws == 0 {
        return Err(Error::Config("max_draws must be at least 1".into()));
    }
    let split = threshold_split(c, cfg.t, cfg.m, cfg.q)?;
    let bound = approximation_bound(cfg.t, cfg.m, cfg.q);
    let reference = cfg
        .reference
        .unwrap_or_else(|| dict.squared_error(c, target));

    let mut heavy = vec![0.0; c.len()];
    for &j in &split.heavy {
        heavy[j] = c[j];
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<SparseApproxResult> = None;
    let mut draws_made = 0;
    for draw in 1..=cfg.max_draws {
        draws_made = draw;
        let rounded = sample_rounding(&split.light, cfg.m, &mut rng);
        let theta: Vec<f64> = heavy.iter().zip(&rounded).map(|(a, b)| a + b).collect();
        let squared_error = dict.squared_error(&theta, target);
        let candidate = SparseApproxResult {
            l1_norm: theta.iter().map(|x| x.abs()).sum(),
            nonzeros: theta.iter().filter(|&&x| x != 0.0).count(),
            squared_error,
            achieved_excess: squared_error - reference,
            bound,
            draws_used: draw,
            theta_m: theta,
        };
        if candidate.achieved_excess <= bound {
            return Ok(candidate);
        }
        if best
            .as_ref()
            .is_none_or(|b| candidate.achieved_excess < b.achieved_excess)
        {
            best = Some(candidate);
        }
        // an empty light part is deterministic, more draws cannot help
        if split.light_l1 == 0.0 {
            break;
        }
    }
    let best = best.expect("at least one draw was made");
    Err(Error::RetryExhausted {
        draws: draws_made,
        best: Box::new(best),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_spike_is_heavy() {
        let s = threshold_split(&[1.0, 0.0, 0.0], 1.0, 2, 1.0).unwrap();
        assert_eq!(s.heavy, vec![0]);
        assert_eq!(s.light_l1, 0.0);
    }

    #[test]
    fn flat_vector_is_all_light() {
        let s = threshold_split(&[0.25; 4], 1.0, 2, 1.0).unwrap();
        assert!(s.heavy.is_empty());
        assert_eq!(s.threshold, 0.5);
        assert_eq!(s.light_l1, 1.0);
        assert!(s.light_l1 <= s.light_budget);
    }

    #[test]
    fn threshold_below_all_magnitudes_takes_support() {
        let c = [0.1, 0.0, -0.2, 0.05];
        // (t / min|c_j|)^q = 0.35 / 0.05 = 7 < m
        let s = threshold_split(&c, 0.35, 8, 1.0).unwrap();
        assert_eq!(s.heavy, vec![0, 2, 3]);
        assert_eq!(s.light_l1, 0.0);
    }

    #[test]
    fn budget_violation_is_reported() {
        let err = threshold_split(&[0.8, 0.8], 1.0, 2, 1.0).unwrap_err();
        assert!(matches!(err, Error::Constraint { .. }));
    }

    #[test]
    fn exact_when_everything_is_heavy() {
        let dict = Dictionary::orthonormal(5);
        let c = [0.0, 0.4, 0.0, -0.3, 0.0];
        let target = dict.evaluate(&c);
        let r = maurey_round(&dict, &c, &target, &RoundingConfig::new(1.0, 3, 1.0, 7)).unwrap();
        assert_eq!(r.theta_m, c.to_vec());
        assert_eq!(r.achieved_excess, 0.0);
        assert_eq!(r.draws_used, 1);
    }

    #[test]
    fn flat_coefficients_meet_bound() {
        let dict = Dictionary::orthonormal(8);
        let c = [0.125; 8];
        let target = dict.evaluate(&c);
        let r = maurey_round(&dict, &c, &target, &RoundingConfig::new(1.0, 4, 1.0, 3)).unwrap();
        assert_eq!(r.bound, 0.5);
        assert!(r.achieved_excess <= 0.5);
        assert!(r.nonzeros <= 7);
        assert!(r.l1_norm <= 1.0 + 1e-12);
    }

    #[test]
    fn rounding_variance_matches_bound() {
        // E||V - g||² ≤ D²/m for an orthonormal dictionary; D = 1, m = 8.
        let dict = Dictionary::orthonormal(8);
        let c = [0.125; 8];
        let split = threshold_split(&c, 1.0, 8, 1.0).unwrap();
        assert!(split.heavy.is_empty());
        let target = dict.evaluate(&c);
        let seeds = 10_000u64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for s in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let v = sample_rounding(&split.light, 8, &mut rng);
            let e = dict.squared_error(&v, &target);
            sum += e;
            sum2 += e * e;
        }
        let mean = sum / seeds as f64;
        let sd = ((sum2 / seeds as f64 - mean * mean) * seeds as f64 / (seeds - 1) as f64).sqrt();
        let se = sd / (seeds as f64).sqrt();
        // exact value here is (1 - 1/8)/8
        assert!(mean <= 1.0 / 8.0 + 3.0 * se, "mean {mean}");
        assert!((mean - 7.0 / 64.0).abs() < 5.0 * se);
    }

    #[test]
    fn seeded_calls_are_bitwise_reproducible() {
        let dict = Dictionary::orthonormal(6);
        let c = [0.3, -0.1, 0.2, 0.15, -0.05, 0.2];
        let target = dict.evaluate(&c);
        let cfg = RoundingConfig::new(1.0, 2, 1.0, 99);
        let a = maurey_round(&dict, &c, &target, &cfg).unwrap();
        let b = maurey_round(&dict, &c, &target, &cfg).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.theta_m), bits(&b.theta_m));
    }

    #[test]
    fn exhausted_retries_carry_best_draw() {
        // A reference far below the achievable error forces failure.
        let dict = Dictionary::orthonormal(4);
        let c = [0.25; 4];
        let target = dict.evaluate(&c);
        let mut cfg = RoundingConfig::new(1.0, 1, 1.0, 5);
        cfg.reference = Some(-10.0);
        cfg.max_draws = 20;
        match maurey_round(&dict, &c, &target, &cfg) {
            Err(Error::RetryExhausted { draws, best }) => {
                assert_eq!(draws, 20);
                assert!(best.achieved_excess > best.bound);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_oversized_columns() {
        let dict = Dictionary::new(DMatrix::from_element(2, 2, 3.0), NormKind::Empirical).unwrap();
        let err = maurey_round(&dict, &[0.1, 0.1], &[0.0, 0.0], &RoundingConfig::new(1.0, 1, 1.0, 0));
        assert!(matches!(err, Err(Error::Domain(_))));
    }
}
