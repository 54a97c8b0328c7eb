//! Subset models for a fixed design, least-squares projections and the
//! penalized selection criteria ABC and ABC′.
//!
//! Column indices are zero-based throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numeric::ln_binomial;

/// Exhaustive enumeration refuses dictionaries larger than this.
pub const DEFAULT_ENUMERATION_CAP: usize = 25;

/// Relative cutoff on the pivoted QR diagonal for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-10;

pub fn default_abc_lambda() -> f64 {
    5.1 * std::f64::consts::LN_2
}

pub fn default_abc_prime_lambda() -> f64 {
    40.0 * std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Intercept-only model `J₀`; fitted values are the sample mean.
    Null,
    /// Columns `indices` of the design.
    Subset,
    /// Identity projection `J̄`; fitted values equal the response.
    FullProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetModel {
    pub kind: ModelKind,
    pub indices: Vec<usize>,
    pub complexity: f64,
    /// `exp(−complexity)`.
    pub prior: f64,
}

impl SubsetModel {
    pub fn subset(mut indices: Vec<usize>, complexity: f64) -> Self {
        indices.sort_unstable();
        Self {
            kind: ModelKind::Subset,
            indices,
            complexity,
            prior: (-complexity).exp(),
        }
    }

    pub fn null(complexity: f64) -> Self {
        Self {
            kind: ModelKind::Null,
            indices: Vec::new(),
            complexity,
            prior: (-complexity).exp(),
        }
    }

    pub fn full_projection(complexity: f64) -> Self {
        Self {
            kind: ModelKind::FullProjection,
            indices: Vec::new(),
            complexity,
            prior: (-complexity).exp(),
        }
    }

    /// Human-readable name: `J0`, `Jbar` or `{0,3}`.
    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::Null => "J0".into(),
            ModelKind::FullProjection => "Jbar".into(),
            ModelKind::Subset => {
                let inner: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
                format!("{{{}}}", inner.join(","))
            }
        }
    }

    /// Deterministic tie order: complexity, kind, then indices.
    fn tie_cmp(&self, other: &Self) -> Ordering {
        self.complexity
            .total_cmp(&other.complexity)
            .then(self.kind.cmp(&other.kind))
            .then_with(|| self.indices.cmp(&other.indices))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPurpose {
    Abc,
    AbcPrime,
    Mls,
}

/// Candidate-list regimes for ABC′.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbcPrimeRegime {
    /// `M ≤ n/2`.
    SmallDictionary,
    /// `M > n/2` and `r_M ≥ n/2`: full model dropped.
    LargeFullRank,
    /// `M > n/2` and `r_M < n/2`.
    LargeRankDeficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeInfo {
    pub regime: AbcPrimeRegime,
    /// Set when `r_M` sits exactly at `⌈n/2⌉`, the smallest rank counted
    /// as `r_M ≥ n/2`.
    pub boundary: bool,
}

pub fn abc_prime_regime(m: usize, n: usize, full_rank: usize) -> RegimeInfo {
    let half_up = n.div_ceil(2);
    if 2 * m <= n {
        return RegimeInfo {
            regime: AbcPrimeRegime::SmallDictionary,
            boundary: false,
        };
    }
    RegimeInfo {
        regime: if full_rank >= half_up {
            AbcPrimeRegime::LargeFullRank
        } else {
            AbcPrimeRegime::LargeRankDeficient
        },
        boundary: full_rank == half_up,
    }
}

/// Calls `f` on every size-`k` subset of `0..m` in lexicographic order.
pub(crate) fn for_each_combination(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + m - k {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn push_sizes(out: &mut Vec<SubsetModel>, m: usize, sizes: std::ops::RangeInclusive<usize>, head: f64, denom: usize) {
    let base = -head.ln() + (denom as f64).ln();
    for size in sizes {
        let c = base + ln_binomial(m, size);
        for_each_combination(m, size, |ix| out.push(SubsetModel::subset(ix.to_vec(), c)));
    }
}

pub fn kraft_sum(models: &[SubsetModel]) -> f64 {
    models.iter().map(|md| (-md.complexity).exp()).sum()
}

/// Fails unless every complexity is nonnegative and `Σ e^{−C_J} ≤ 1`.
pub fn check_kraft(models: &[SubsetModel]) -> Result<()> {
    if let Some(bad) = models.iter().find(|md| md.complexity.is_nan() || md.complexity < 0.0) {
        return Err(Error::Config(format!(
            "model {} has complexity {}",
            bad.label(),
            bad.complexity
        )));
    }
    let s = kraft_sum(models);
    if s > 1.0 + 1e-12 {
        return Err(Error::Invariant(format!("Kraft sum {s} exceeds 1")));
    }
    Ok(())
}

/// Lists the candidate models and their complexities.
///
/// `full_rank` is the rank of the whole design; it only matters for ABC′
/// with `M > n/2`.
pub fn enumerate_models(m: usize, n: usize, purpose: ModelPurpose, full_rank: usize) -> Result<Vec<SubsetModel>> {
    enumerate_models_capped(m, n, purpose, full_rank, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_models_capped(
    m: usize,
    n: usize,
    purpose: ModelPurpose,
    full_rank: usize,
    cap: usize,
) -> Result<Vec<SubsetModel>> {
    if m == 0 {
        return Err(Error::Data("design has no columns".into()));
    }
    if n < 2 {
        return Err(Error::Domain(format!("need n ≥ 2 observations, got {n}")));
    }
    if m > cap {
        return Err(Error::Capacity { m, cap });
    }
    let c05 = -(0.05f64).ln();
    let mut out = Vec::new();
    match purpose {
        ModelPurpose::Abc | ModelPurpose::Mls => {
            let top = (m - 1).min(n);
            if top >= 1 {
                push_sizes(&mut out, m, 1..=top, 0.85, top);
            }
            if m <= n {
                out.push(SubsetModel::subset((0..m).collect(), c05));
            }
            out.push(SubsetModel::null(c05));
            out.push(SubsetModel::full_projection(c05));
        }
        ModelPurpose::AbcPrime => {
            let info = abc_prime_regime(m, n, full_rank);
            let half = n / 2;
            match info.regime {
                AbcPrimeRegime::SmallDictionary => {
                    if m >= 2 {
                        push_sizes(&mut out, m, 1..=m - 1, 0.85, m - 1);
                    }
                    out.push(SubsetModel::subset((0..m).collect(), c05));
                    out.push(SubsetModel::null(c05));
                    out.push(SubsetModel::full_projection(c05));
                }
                AbcPrimeRegime::LargeFullRank => {
                    let c10 = -(0.1f64).ln();
                    if half >= 1 {
                        push_sizes(&mut out, m, 1..=half, 0.8, half);
                    }
                    out.push(SubsetModel::null(c10));
                    out.push(SubsetModel::full_projection(c10));
                }
                AbcPrimeRegime::LargeRankDeficient => {
                    if half >= 1 {
                        push_sizes(&mut out, m, 1..=half, 0.85, half);
                    }
                    out.push(SubsetModel::subset((0..m).collect(), c05));
                    out.push(SubsetModel::null(c05));
                    out.push(SubsetModel::full_projection(c05));
                }
            }
        }
    }
    check_kraft(&out)?;
    Ok(out)
}

/// Least-squares fit of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub projection: Vec<f64>,
    /// Unnormalized residual sum of squares.
    pub rss: f64,
    pub rank: usize,
    /// Minimal-norm coefficients on the model's columns. The null model
    /// stores its mean; the full projection stores nothing.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Basis {
    Null,
    Full,
    Subset {
        /// `n × r` orthonormal basis of the column span.
        u: DMatrix<f64>,
        /// `|J| × r` map from basis scores to minimal-norm coefficients.
        coef: DMatrix<f64>,
    },
}

fn check_design(design: &DMatrix<f64>) -> Result<()> {
    if design.ncols() == 0 {
        return Err(Error::Data("design has no columns".into()));
    }
    if design.nrows() < 2 {
        return Err(Error::Data(format!("design has {} rows; need at least 2", design.nrows())));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("design contains non-finite entries".into()));
    }
    Ok(())
}

/// Orthonormal basis of the column span, its rank, and the map from basis
/// scores to minimal-norm coefficients. Uses Householder QR with column
/// pivoting followed by a second QR of the retained rows, i.e. a complete
/// orthogonal decomposition.
fn orthogonal_decomposition(sub: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, k) = sub.shape();
    if k == 0 || n == 0 {
        return (DMatrix::zeros(n, 0), DMatrix::zeros(k, 0));
    }
    let qr = sub.col_piv_qr();
    let (q, r, p) = (qr.q(), qr.r(), qr.p());
    let diag = r.nrows().min(k);
    let top = r[(0, 0)].abs();
    let rank = if top == 0.0 || !top.is_finite() {
        0
    } else {
        (0..diag).take_while(|&i| r[(i, i)].abs() > RANK_TOLERANCE * top).count()
    };
    let u = q.columns(0, rank).into_owned();
    if rank == 0 {
        return (u, DMatrix::zeros(k, 0));
    }
    // R₁ᵀ = Z T, so X P = U Tᵀ Zᵀ and the minimal-norm solution is
    // P Z T^{-T} Uᵀ y.
    let r1t = r.rows(0, rank).transpose();
    let qr2 = r1t.qr();
    let z = qr2.q();
    let t = qr2.r();
    let t_inv = t
        .solve_upper_triangular(&DMatrix::identity(rank, rank))
        .unwrap_or_else(|| DMatrix::zeros(rank, rank));
    let mut perm = DMatrix::<f64>::identity(k, k);
    p.permute_columns(&mut perm);
    let coef = perm * z * t_inv.transpose();
    (u, coef)
}

/// Orthonormal basis of the column span of `x`.
pub(crate) fn column_space_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    orthogonal_decomposition(x.clone()).0
}

fn subset_basis(design: &DMatrix<f64>, indices: &[usize]) -> Result<Basis> {
    let n = design.nrows();
    if let Some(&bad) = indices.iter().find(|&&j| j >= design.ncols()) {
        return Err(Error::Data(format!(
            "column {bad} out of range for a design with {} columns",
            design.ncols()
        )));
    }
    let sub = DMatrix::from_fn(n, indices.len(), |i, j| design[(i, indices[j])]);
    let (u, coef) = orthogonal_decomposition(sub);
    Ok(Basis::Subset { u, coef })
}

fn fit_basis(basis: &Basis, y: &[f64]) -> FitResult {
    let n = y.len();
    match basis {
        Basis::Null => {
            let mean = y.iter().sum::<f64>() / n as f64;
            let rss = y.iter().map(|v| (v - mean).powi(2)).sum();
            FitResult {
                projection: vec![mean; n],
                rss,
                rank: 1,
                coefficients: vec![mean],
            }
        }
        Basis::Full => FitResult {
            projection: y.to_vec(),
            rss: 0.0,
            rank: n,
            coefficients: Vec::new(),
        },
        Basis::Subset { u, coef } => {
            let yv = DVector::from_column_slice(y);
            let scores = u.tr_mul(&yv);
            let proj = u * &scores;
            let rss = y.iter().zip(proj.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            FitResult {
                projection: proj.as_slice().to_vec(),
                rss,
                rank: u.ncols(),
                coefficients: (coef * scores).as_slice().to_vec(),
            }
        }
    }
}

fn check_response(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::Data(format!("{} responses for a design with {n} rows", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("responses must be finite".into()));
    }
    Ok(())
}

/// Least-squares projection of `y` onto the span of model `model`.
pub fn project(design: &DMatrix<f64>, y: &[f64], model: &SubsetModel) -> Result<FitResult> {
    check_design(design)?;
    check_response(y, design.nrows())?;
    let basis = match model.kind {
        ModelKind::Null => Basis::Null,
        ModelKind::FullProjection => Basis::Full,
        ModelKind::Subset => subset_basis(design, &model.indices)?,
    };
    Ok(fit_basis(&basis, y))
}

/// Precomputed projections for every model of a list on one fixed design.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    n: usize,
    full_rank: usize,
    models: Vec<SubsetModel>,
    bases: Vec<Basis>,
}

impl ProjectionSet {
    pub fn new(design: &DMatrix<f64>, models: Vec<SubsetModel>) -> Result<Self> {
        check_design(design)?;
        if models.is_empty() {
            return Err(Error::Data("empty model list".into()));
        }
        let bases = models
            .iter()
            .map(|md| match md.kind {
                ModelKind::Null => Ok(Basis::Null),
                ModelKind::FullProjection => Ok(Basis::Full),
                ModelKind::Subset => subset_basis(design, &md.indices),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n: design.nrows(),
            full_rank: design_rank(design),
            models,
            bases,
        })
    }

    pub fn models(&self) -> &[SubsetModel] {
        &self.models
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn full_rank(&self) -> usize {
        self.full_rank
    }

    pub fn fit(&self, index: usize, y: &[f64]) -> Result<FitResult> {
        check_response(y, self.n)?;
        Ok(fit_basis(&self.bases[index], y))
    }

    pub fn fit_all(&self, y: &[f64]) -> Result<Vec<FitResult>> {
        check_response(y, self.n)?;
        Ok(self.bases.iter().map(|b| fit_basis(b, y)).collect())
    }
}

/// Numerical rank of the design under [`RANK_TOLERANCE`].
pub fn design_rank(design: &DMatrix<f64>) -> usize {
    column_space_basis(design).ncols()
}

/// Scoring rule plugged into [`select_with`].
pub trait Criterion {
    fn score(&self, model: &SubsetModel, fit: &FitResult, n: usize) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Abc,
    AbcPrime,
}

/// `sigma` is the known noise level for ABC and the upper bound `σ̄` for
/// ABC′.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub criterion: CriterionKind,
    pub lambda: f64,
    pub sigma: f64,
}

impl SelectionConfig {
    pub fn abc(sigma: f64) -> Result<Self> {
        Self::new(CriterionKind::Abc, default_abc_lambda(), sigma)
    }

    pub fn abc_prime(sigma_bar: f64) -> Result<Self> {
        Self::new(CriterionKind::AbcPrime, default_abc_prime_lambda(), sigma_bar)
    }

    pub fn new(criterion: CriterionKind, lambda: f64, sigma: f64) -> Result<Self> {
        let floor = match criterion {
            CriterionKind::Abc => default_abc_lambda(),
            CriterionKind::AbcPrime => default_abc_prime_lambda(),
        };
        if !(lambda.is_finite() && lambda >= floor * (1.0 - 1e-12)) {
            return Err(Error::Config(format!("λ = {lambda} is below the admissible minimum {floor}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!("σ must be finite and nonnegative, got {sigma}")));
        }
        Ok(Self {
            criterion,
            lambda,
            sigma,
        })
    }

    pub fn purpose(&self) -> ModelPurpose {
        match self.criterion {
            CriterionKind::Abc => ModelPurpose::Abc,
            CriterionKind::AbcPrime => ModelPurpose::AbcPrime,
        }
    }
}

impl Criterion for SelectionConfig {
    fn score(&self, model: &SubsetModel, fit: &FitResult, n: usize) -> Result<f64> {
        match self.criterion {
            CriterionKind::Abc => Ok(abc_score(model, fit, self, n)),
            CriterionKind::AbcPrime => abc_prime_score(model, fit, self, n),
        }
    }
}

/// `RSS + 2rσ² + λσ²C`. With `r = n, RSS = 0` for `J̄` and `r = 1` for `J₀`
/// this covers the special forms as well.
pub fn abc_score(model: &SubsetModel, fit: &FitResult, config: &SelectionConfig, n: usize) -> f64 {
    let s2 = config.sigma * config.sigma;
    match model.kind {
        ModelKind::FullProjection => 2.0 * n as f64 * s2 + config.lambda * s2 * model.complexity,
        _ => fit.rss + 2.0 * fit.rank as f64 * s2 + config.lambda * s2 * model.complexity,
    }
}

/// `(1 + 2r/(n−r))(RSS + λσ̄²C)`, and `(1 + 2n)λσ̄²C` for `J̄`.
pub fn abc_prime_score(model: &SubsetModel, fit: &FitResult, config: &SelectionConfig, n: usize) -> Result<f64> {
    let pen = config.lambda * config.sigma * config.sigma * model.complexity;
    if model.kind == ModelKind::FullProjection {
        return Ok((1.0 + 2.0 * n as f64) * pen);
    }
    if fit.rank >= n {
        return Err(Error::Regime(format!(
            "model {} has rank {} ≥ n = {n}; ABC′ needs r < n",
            model.label(),
            fit.rank
        )));
    }
    let r = fit.rank as f64;
    Ok((1.0 + 2.0 * r / (n as f64 - r)) * (fit.rss + pen))
}

/// One row of a score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub label: String,
    pub kind: ModelKind,
    pub indices: Vec<usize>,
    pub rank: usize,
    pub complexity: f64,
    pub rss: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: SubsetModel,
    pub chosen_index: usize,
    pub fitted: Vec<f64>,
    pub table: Vec<ScoreRow>,
    pub regime: Option<RegimeInfo>,
}

/// Scores every model of `set` and returns the minimizer; ties go to the
/// smaller complexity, then `J₀ < subsets < J̄`, then lexicographic indices.
pub fn select_with(set: &ProjectionSet, y: &[f64], criterion: &dyn Criterion) -> Result<Selection> {
    let fits = set.fit_all(y)?;
    let n = set.n();
    let mut table = Vec::with_capacity(fits.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (md, fit)) in set.models().iter().zip(&fits).enumerate() {
        let s = criterion.score(md, fit, n)?;
        if s.is_nan() {
            return Err(Error::Invariant(format!("score of {} is NaN", md.label())));
        }
        best = match best {
            None => Some((i, s)),
            Some((bi, bs)) => {
                let ord = s.total_cmp(&bs).then_with(|| md.tie_cmp(&set.models()[bi]));
                if ord == Ordering::Less {
                    Some((i, s))
                } else {
                    Some((bi, bs))
                }
            }
        };
        table.push(ScoreRow {
            label: md.label(),
            kind: md.kind,
            indices: md.indices.clone(),
            rank: fit.rank,
            complexity: md.complexity,
            rss: fit.rss,
            score: s,
        });
    }
    let (bi, _) = best.expect("model list is nonempty");
    let mut fits = fits;
    Ok(Selection {
        chosen: set.models()[bi].clone(),
        chosen_index: bi,
        fitted: std::mem::take(&mut fits[bi].projection),
        table,
        regime: None,
    })
}

/// A criterion bound to a fixed design, with projections precomputed so
/// repeated responses are cheap.
#[derive(Debug, Clone)]
pub struct ModelSelector {
    config: SelectionConfig,
    set: ProjectionSet,
    regime: Option<RegimeInfo>,
}

impl ModelSelector {
    pub fn new(design: &DMatrix<f64>, config: SelectionConfig) -> Result<Self> {
        check_design(design)?;
        let (n, m) = design.shape();
        let rank = design_rank(design);
        let models = enumerate_models(m, n, config.purpose(), rank)?;
        let regime = match config.criterion {
            CriterionKind::AbcPrime => Some(abc_prime_regime(m, n, rank)),
            CriterionKind::Abc => None,
        };
        Ok(Self {
            config,
            set: ProjectionSet::new(design, models)?,
            regime,
        })
    }

    pub fn projections(&self) -> &ProjectionSet {
        &self.set
    }
    pub fn config(&self) -> &SelectionConfig {
        &self.config
    }

    pub fn select(&self, y: &[f64]) -> Result<Selection> {
        let mut sel = select_with(&self.set, y, &self.config)?;
        sel.regime = self.regime;
        Ok(sel)
    }
}

pub fn abc_select(design: &DMatrix<f64>, y: &[f64], config: &SelectionConfig) -> Result<Selection> {
    if config.criterion != CriterionKind::Abc {
        return Err(Error::Config("abc_select needs an ABC configuration".into()));
    }
    ModelSelector::new(design, *config)?.select(y)
}

pub fn abc_prime_select(design: &DMatrix<f64>, y: &[f64], config: &SelectionConfig) -> Result<Selection> {
    if config.criterion != CriterionKind::AbcPrime {
        return Err(Error::Config("abc_prime_select needs an ABC′ configuration".into()));
    }
    ModelSelector::new(design, *config)?.select(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_design(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn complexity_values() {
        let models = enumerate_models(10, 12, ModelPurpose::Abc, 10).unwrap();
        let pair = models.iter().find(|md| md.indices == vec![0, 1]).unwrap();
        assert!((pair.complexity - 6.166_405_996_604_314).abs() < 1e-12);
        let full = models
            .iter()
            .find(|md| md.kind == ModelKind::Subset && md.indices.len() == 10)
            .unwrap();
        assert!((full.complexity - 2.995_732_273_553_991).abs() < 1e-12);
        // J_M and J̄ are both present
        assert!(models.iter().any(|md| md.kind == ModelKind::FullProjection));
        assert_eq!(models.len(), (1 << 10) - 1 + 2);
        assert!((kraft_sum(&models) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_cap() {
        assert!(matches!(
            enumerate_models(26, 100, ModelPurpose::Abc, 26),
            Err(Error::Capacity { m: 26, cap: 25 })
        ));
    }

    #[test]
    fn abc_list_when_m_exceeds_n() {
        let models = enumerate_models(6, 4, ModelPurpose::Abc, 4).unwrap();
        assert!(models.iter().all(|md| md.indices.len() <= 4));
        let subsets = models.iter().filter(|md| md.kind == ModelKind::Subset).count();
        assert_eq!(subsets, 6 + 15 + 20 + 15);
        assert!(kraft_sum(&models) <= 1.0 + 1e-12);
    }

    #[test]
    fn abc_prime_regimes() {
        let r1 = enumerate_models(3, 10, ModelPurpose::AbcPrime, 3).unwrap();
        assert_eq!(r1.len(), 3 + 3 + 3);
        let r2 = enumerate_models(8, 10, ModelPurpose::AbcPrime, 8).unwrap();
        assert!(r2.iter().all(|md| md.indices.len() <= 5));
        assert!(!r2.iter().any(|md| md.indices.len() == 8));
        let j0 = r2.iter().find(|md| md.kind == ModelKind::Null).unwrap();
        assert!((j0.complexity + (0.1f64).ln()).abs() < 1e-15);
        assert!((kraft_sum(&r2) - 1.0).abs() < 1e-12);
        let r3 = enumerate_models(8, 10, ModelPurpose::AbcPrime, 4).unwrap();
        assert!(r3.iter().any(|md| md.indices.len() == 8));
        assert_eq!(abc_prime_regime(8, 10, 5), RegimeInfo { regime: AbcPrimeRegime::LargeFullRank, boundary: true });
        assert_eq!(abc_prime_regime(8, 9, 4).regime, AbcPrimeRegime::LargeRankDeficient);
        assert_eq!(abc_prime_regime(8, 9, 5).regime, AbcPrimeRegime::LargeFullRank);
    }

    #[test]
    fn projection_examples() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = [1.0, 2.0, 3.0];
        let f0 = project(&x, &y, &SubsetModel::null(1.0)).unwrap();
        assert_eq!(f0.projection, vec![2.0; 3]);
        assert!((f0.rss - 2.0).abs() < 1e-15);
        let fb = project(&x, &y, &SubsetModel::full_projection(1.0)).unwrap();
        assert_eq!(fb.projection, y.to_vec());
        assert_eq!((fb.rss, fb.rank), (0.0, 3));
        let dup = project(&x, &y, &SubsetModel::subset(vec![0, 1], 1.0)).unwrap();
        let one = project(&x, &y, &SubsetModel::subset(vec![0], 1.0)).unwrap();
        assert_eq!(dup.rank, 1);
        for (a, b) in dup.projection.iter().zip(&one.projection) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(project(&x, &[1.0, f64::NAN, 0.0], &SubsetModel::null(1.0)).is_err());
    }

    #[test]
    fn abc_score_examples() {
        let cfg = SelectionConfig::abc(1.0).unwrap();
        let c = -(0.05f64).ln();
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = [1.0; 4];
        let j0 = SubsetModel::null(c);
        let fit = project(&x, &y, &j0).unwrap();
        assert!((abc_score(&j0, &fit, &cfg, 4) - 12.590_065_233_544_557).abs() < 1e-12);
        let jb = SubsetModel::full_projection(c);
        let fit = project(&x, &y, &jb).unwrap();
        assert!((abc_score(&jb, &fit, &cfg, 4) - 18.590_065_233_544_557).abs() < 1e-12);

        // zero response: J₀ beats J̄
        let set = ProjectionSet::new(&x, vec![j0.clone(), jb]).unwrap();
        let sel = select_with(&set, &[0.0; 4], &cfg).unwrap();
        assert_eq!(sel.chosen, j0);
    }

    #[test]
    fn abc_prime_score_examples() {
        let cfg = SelectionConfig::abc_prime(1.0).unwrap();
        let c = -(0.05f64).ln();
        let x = DMatrix::from_element(5, 1, 1.0);
        let y = [0.0; 5];
        let j0 = SubsetModel::null(c);
        let fit = project(&x, &y, &j0).unwrap();
        assert!((abc_prime_score(&j0, &fit, &cfg, 5).unwrap() - 124.589_002_747_583_02).abs() < 1e-9);
        let jb = SubsetModel::full_projection(c);
        let fit = project(&x, &y, &jb).unwrap();
        assert!((abc_prime_score(&jb, &fit, &cfg, 5).unwrap() - 913.652_686_815_608_8).abs() < 1e-9);

        let zero = DMatrix::zeros(5, 1);
        let y = [1.0, 0.0, -1.0, 2.0, 0.5];
        let md = SubsetModel::subset(vec![0], 1.5);
        let fit = project(&zero, &y, &md).unwrap();
        assert_eq!(fit.rank, 0);
        let want = fit.rss + cfg.lambda * 1.5;
        assert!((abc_prime_score(&md, &fit, &cfg, 5).unwrap() - want).abs() < 1e-12);

        let sq = DMatrix::<f64>::identity(5, 5);
        let all = SubsetModel::subset((0..5).collect(), 1.0);
        let fit = project(&sq, &y, &all).unwrap();
        assert!(matches!(abc_prime_score(&all, &fit, &cfg, 5), Err(Error::Regime(_))));
    }

    #[test]
    fn lambda_floor_enforced() {
        assert!(SelectionConfig::new(CriterionKind::Abc, 3.0, 1.0).is_err());
        assert!(SelectionConfig::new(CriterionKind::AbcPrime, 10.0, 1.0).is_err());
        assert!(SelectionConfig::new(CriterionKind::AbcPrime, 28.0, 1.0).is_ok());
    }

    #[test]
    fn abc_recovers_strong_signal() {
        let (n, m) = (50, 5);
        let cfg = SelectionConfig::abc(0.01).unwrap();
        let mut hits = 0;
        for seed in 0..100u64 {
            let x = gaussian_design(n, m, 1000 + seed);
            let sel = ModelSelector::new(&x, cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..n)
                .map(|i| 3.0 * x[(i, 2)] + 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let s = sel.select(&y).unwrap();
            if s.chosen.indices.contains(&2) {
                hits += 1;
            }
        }
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn abc_fits_nothing_on_pure_noise() {
        // Zero columns: every subset has rank 0 and fits the zero function,
        // so "no signal" is either J₀ or a rank-0 subset, never J̄.
        let (n, m) = (40, 10);
        let x = DMatrix::zeros(n, m);
        let sel = ModelSelector::new(&x, SelectionConfig::abc(1.0).unwrap()).unwrap();
        let mut null = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let s = sel.select(&y).unwrap();
            let row = &s.table[s.chosen_index];
            assert!(s.chosen.kind == ModelKind::Null || row.rank == 0, "{}", s.chosen.label());
            if s.chosen.kind == ModelKind::Null {
                null += 1;
            }
        }
        // with a nonzero column the null model wins most of the time
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut x = DMatrix::zeros(n, m);
        for i in 0..n {
            x[(i, 0)] = rng.sample(StandardNormal);
        }
        let sel = ModelSelector::new(&x, SelectionConfig::abc(1.0).unwrap()).unwrap();
        let mut null_or_empty = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let s = sel.select(&y).unwrap();
            if s.table[s.chosen_index].rank <= 1 && !s.chosen.indices.contains(&0) {
                null_or_empty += 1;
            }
        }
        assert!(null_or_empty > 25, "{null_or_empty} {null}");
    }

    #[test]
    fn abc_prime_mirrors_abc() {
        let (n, m) = (60, 4);
        let cfg = SelectionConfig::abc_prime(0.02).unwrap();
        let mut hits = 0;
        for seed in 0..20u64 {
            let x = gaussian_design(n, m, 500 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..n)
                .map(|i| 3.0 * x[(i, 1)] + 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let s = abc_prime_select(&x, &y, &cfg).unwrap();
            assert_eq!(s.regime.unwrap().regime, AbcPrimeRegime::SmallDictionary);
            if s.chosen.indices.contains(&1) {
                hits += 1;
            }
        }
        assert_eq!(hits, 20);
    }

    #[test]
    fn single_candidate_is_chosen() {
        let x = gaussian_design(6, 2, 3);
        let md = SubsetModel::subset(vec![1], 0.5);
        let set = ProjectionSet::new(&x, vec![md.clone()]).unwrap();
        let s = select_with(&set, &[1.0, 2.0, 0.0, -1.0, 0.3, 0.3], &SelectionConfig::abc(1.0).unwrap()).unwrap();
        assert_eq!(s.chosen, md);
    }

    #[test]
    fn ties_follow_complexity_then_indices() {
        let x = DMatrix::from_element(4, 2, 1.0);
        let a = SubsetModel::subset(vec![1], 1.0);
        let b = SubsetModel::subset(vec![0], 1.0);
        let set = ProjectionSet::new(&x, vec![a, b.clone()]).unwrap();
        let s = select_with(&set, &[1.0, 2.0, 3.0, 4.0], &SelectionConfig::abc(1.0).unwrap()).unwrap();
        assert_eq!(s.chosen, b);
    }

    #[test]
    fn zero_columns_rejected() {
        let x = DMatrix::<f64>::zeros(5, 0);
        let err = abc_select(&x, &[0.0; 5], &SelectionConfig::abc(1.0).unwrap()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn score_rows_serialize() {
        let row = ScoreRow {
            label: "{0,2}".into(),
            kind: ModelKind::Subset,
            indices: vec![0, 2],
            rank: 2,
            complexity: 1.5,
            rss: 3.0,
            score: 9.0,
        };
        let s = serde_json::to_string(&row).unwrap();
        assert!(s.contains("\"indices\":[0,2]"));
        assert!(s.contains("\"score\":9.0"));
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut seen = Vec::new();
        for_each_combination(4, 2, |c| seen.push(c.to_vec()));
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        let mut count = 0;
        for_each_combination(3, 0, |_| count += 1);
        assert_eq!(count, 1);
        for_each_combination(3, 3, |c| assert_eq!(c, &[0, 1, 2]));
    }

    proptest! {
        #[test]
        fn kraft_holds_for_every_list(m in 1usize..=12, n in 2usize..40, rank_frac in 0.0f64..=1.0) {
            let rank = ((m.min(n) as f64) * rank_frac).round() as usize;
            for p in [ModelPurpose::Abc, ModelPurpose::AbcPrime, ModelPurpose::Mls] {
                let models = enumerate_models(m, n, p, rank).unwrap();
                prop_assert!(kraft_sum(&models) <= 1.0 + 1e-12);
                prop_assert!(models.iter().all(|md| md.complexity > 0.0));
            }
        }

        #[test]
        fn projection_is_optimal_idempotent_and_nested(
            n in 4usize..20, m in 1usize..5, seed in any::<u64>(),
        ) {
            let mut x = gaussian_design(n, m, seed);
            if m >= 2 {
                // force a rank deficiency sometimes
                if seed % 3 == 0 {
                    let c0 = x.column(0).clone_owned();
                    x.set_column(m - 1, &(c0 * 2.0));
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let models = enumerate_models(m, n, ModelPurpose::Abc, m).unwrap();
            let set = ProjectionSet::new(&x, models.clone()).unwrap();
            let fits = set.fit_all(&y).unwrap();
            for (md, fit) in models.iter().zip(&fits) {
                let direct: f64 = y.iter().zip(&fit.projection).map(|(a, b)| (a - b).powi(2)).sum();
                prop_assert!((direct - fit.rss).abs() <= 1e-9 * (1.0 + direct));
                let again = project(&x, &fit.projection, md).unwrap();
                for (a, b) in again.projection.iter().zip(&fit.projection) {
                    prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
                }
                prop_assert!(fit.rank <= md.indices.len().max(1).min(n) || md.kind == ModelKind::FullProjection);
                if md.kind == ModelKind::Subset {
                    for _ in 0..100 {
                        let b: Vec<f64> = md.indices.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
                        let rss: f64 = (0..n).map(|i| {
                            let f: f64 = md.indices.iter().zip(&b).map(|(&j, bj)| x[(i, j)] * bj).sum();
                            (y[i] - f).powi(2)
                        }).sum();
                        prop_assert!(fit.rss <= rss + 1e-9);
                    }
                    // coefficients reproduce the projection
                    for i in 0..n {
                        let f: f64 = md.indices.iter().zip(&fit.coefficients).map(|(&j, bj)| x[(i, j)] * bj).sum();
                        prop_assert!((f - fit.projection[i]).abs() < 1e-8 * (1.0 + f.abs()));
                    }
                }
            }
            for (a, fa) in models.iter().zip(&fits) {
                for (b, fb) in models.iter().zip(&fits) {
                    if a.kind == ModelKind::Subset && b.kind == ModelKind::Subset
                        && a.indices.iter().all(|j| b.indices.contains(j)) {
                        prop_assert!(fa.rss >= fb.rss - 1e-9);
                    }
                }
            }
        }
    }
}
