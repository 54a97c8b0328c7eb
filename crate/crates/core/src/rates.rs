//! Sparsity indices and minimax rate shapes for ℓq-constrained aggregation.
//!
//! Everything here is a pure function of [`ProblemDims`] and a
//! [`SparsityBudget`]. Logarithms are natural logs. Rates are returned as
//! shapes only: the unknown constants of the upper and lower bounds are not
//! modelled.
//!
//! The three budget cases are
//!
//! * [`ConstraintCase::LqOnly`]: `||θ||_q ≤ t` with `0 < q ≤ 1`,
//! * [`ConstraintCase::L0Only`]: at most `k` nonzero coefficients,
//! * [`ConstraintCase::Joint`]: both at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ceil_robust;

/// `(Σ|θ_j|^q)^{1/q}` for `q > 0`, the number of nonzero entries for `q = 0`.
pub fn lq_norm(theta: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("q must lie in [0, 1], got {q}")));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("coefficients must be finite".into()));
    }
    if q == 0.0 {
        return Ok(theta.iter().filter(|&&x| x != 0.0).count() as f64);
    }
    if q == 1.0 {
        return Ok(theta.iter().map(|x| x.abs()).sum());
    }
    let s: f64 = theta.iter().map(|x| x.abs().powf(q)).sum();
    Ok(s.powf(1.0 / q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintCase {
    LqOnly,
    L0Only,
    Joint,
}

/// Which ℓq-hull (or ℓ0 set, or intersection) is targeted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityBudget {
    q: f64,
    t: Option<f64>,
    k: Option<usize>,
    case: ConstraintCase,
}

impl SparsityBudget {
    pub fn lq(q: f64, t: f64) -> Result<Self> {
        check_q_t(q, t)?;
        Ok(Self {
            q,
            t: Some(t),
            k: None,
            case: ConstraintCase::LqOnly,
        })
    }

    pub fn l0(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        Ok(Self {
            q: 0.0,
            t: None,
            k: Some(k),
            case: ConstraintCase::L0Only,
        })
    }

    pub fn joint(q: f64, t: f64, k: usize) -> Result<Self> {
        check_q_t(q, t)?;
        if k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        Ok(Self {
            q,
            t: Some(t),
            k: Some(k),
            case: ConstraintCase::Joint,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn t(&self) -> Option<f64> {
        self.t
    }
    pub fn k(&self) -> Option<usize> {
        self.k
    }
    pub fn case(&self) -> ConstraintCase {
        self.case
    }

    /// Checks `k ≤ M` against a concrete dictionary size.
    pub fn validate_for(&self, dims: &ProblemDims) -> Result<()> {
        if let Some(k) = self.k {
            if k > dims.m {
                return Err(Error::Domain(format!(
                    "k = {k} exceeds the dictionary size M = {}",
                    dims.m
                )));
            }
        }
        Ok(())
    }

    /// The ℓq part of a Joint budget as a standalone budget.
    fn lq_part(&self) -> Self {
        Self {
            q: self.q,
            t: self.t,
            k: None,
            case: ConstraintCase::LqOnly,
        }
    }

    fn l0_part(&self) -> Self {
        Self {
            q: 0.0,
            t: None,
            k: self.k,
            case: ConstraintCase::L0Only,
        }
    }

    fn radius(&self) -> f64 {
        self.t.expect("ℓq budgets always carry a radius")
    }

    fn sparsity(&self) -> usize {
        self.k.expect("ℓ0 budgets always carry a sparsity level")
    }
}

fn check_q_t(q: f64, t: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!(
            "ℓq budgets need 0 < q ≤ 1, got {q}"
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("radius t must be positive, got {t}")));
    }
    Ok(())
}

/// Sample size, dictionary size and noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemDims {
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    /// Precision `σ^{-2}`.
    pub tau: f64,
}

impl ProblemDims {
    pub fn new(n: usize, m: usize, sigma: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("sample size must be ≥ 2, got {n}")));
        }
        if m == 0 {
            return Err(Error::Domain("dictionary size must be ≥ 1".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("σ must be positive, got {sigma}")));
        }
        Ok(Self {
            n,
            m,
            sigma,
            tau: 1.0 / (sigma * sigma),
        })
    }

    fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    fn cap(&self) -> usize {
        self.m.min(self.n)
    }
}

/// `SER(m) = 1 + log(M/m)`: price of searching among size-`m` subsets
/// relative to estimating one of them.
pub fn search_ratio(m: usize, dict_size: usize) -> Result<f64> {
    if m == 0 || m > dict_size {
        return Err(Error::Domain(format!(
            "search ratio needs 1 ≤ m ≤ M, got m = {m}, M = {dict_size}"
        )));
    }
    Ok(1.0 + (dict_size as f64 / m as f64).ln())
}

fn ser(m: usize, dict_size: usize) -> f64 {
    1.0 + (dict_size as f64 / m as f64).ln()
}

/// `(n t² τ)^{q/2}`, the uncapped ideal size.
fn lq_base(dims: &ProblemDims, q: f64, t: f64) -> f64 {
    (dims.n as f64 * t * t * dims.tau).powf(q / 2.0)
}

/// The ideal model size `m*`. For Joint budgets the ℓq value is returned;
/// the `k` cap is applied by [`effective_model_size`].
pub fn ideal_model_size(dims: &ProblemDims, budget: &SparsityBudget) -> usize {
    match budget.case {
        ConstraintCase::L0Only => budget.sparsity().min(dims.n),
        ConstraintCase::LqOnly | ConstraintCase::Joint => {
            let base = ceil_robust(lq_base(dims, budget.q, budget.radius()));
            let capped = base.min(dims.cap() as f64);
            (capped as usize).max(1)
        }
    }
}

fn lq_effective_size(dims: &ProblemDims, q: f64, t: f64) -> usize {
    let budget = SparsityBudget {
        q,
        t: Some(t),
        k: None,
        case: ConstraintCase::LqOnly,
    };
    let ideal = ideal_model_size(dims, &budget);
    if ideal == dims.cap() {
        return ideal;
    }
    let deflated = ideal as f64 / ser(ideal, dims.m).powf(q / 2.0);
    (ceil_robust(deflated) as usize).clamp(1, ideal)
}

/// The effective model size `m★^F` for the budget's case.
pub fn effective_model_size(dims: &ProblemDims, budget: &SparsityBudget) -> usize {
    match budget.case {
        ConstraintCase::LqOnly => lq_effective_size(dims, budget.q, budget.radius()),
        ConstraintCase::L0Only => budget.sparsity().min(dims.n),
        ConstraintCase::Joint => {
            lq_effective_size(dims, budget.q, budget.radius()).min(budget.sparsity())
        }
    }
}

/// `σ²(1 ∧ m(1 + log(M/m))/n)` at a given model size.
pub fn reg_rate_at(m: usize, dims: &ProblemDims) -> f64 {
    let m = m.clamp(1, dims.m);
    let v = m as f64 * ser(m, dims.m) / dims.n as f64;
    dims.sigma2() * v.min(1.0)
}

/// The optimal risk-regret rate `REG(m★^F)`.
pub fn reg_rate(dims: &ProblemDims, budget: &SparsityBudget) -> f64 {
    reg_rate_at(effective_model_size(dims, budget), dims)
}

/// Which piece of a piecewise rate definition produced the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateBranch {
    /// `m★ = n`: the rate does not converge.
    SampleSaturated,
    /// `m★ = M` (random design) or `m★ = M ∧ n` (fixed design).
    FullDictionary,
    /// `1 < m★ < M ∧ n`.
    Intermediate,
    /// `m★ = 1`.
    SingleTerm,
    /// The ℓ0 shape `k(1 + log(M/k))/n`.
    HardSparsity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub branch: RateBranch,
}

/// `σ^{2−q} t^q ((1 + log(M/(n t² τ)^{q/2}))/n)^{1−q/2}`.
fn intermediate_shape(dims: &ProblemDims, q: f64, t: f64) -> f64 {
    let base = lq_base(dims, q, t);
    let inner = (1.0 + (dims.m as f64 / base).ln()) / dims.n as f64;
    dims.sigma.powf(2.0 - q) * t.powf(q) * inner.powf(1.0 - q / 2.0)
}

fn hard_sparsity_shape(dims: &ProblemDims, k: usize) -> f64 {
    dims.sigma2() * k as f64 * ser(k, dims.m) / dims.n as f64
}

fn psi_lq(dims: &ProblemDims, q: f64, t: f64) -> Rate {
    let s2 = dims.sigma2();
    let m_eff = lq_effective_size(dims, q, t);
    if m_eff == dims.n {
        Rate {
            value: s2,
            branch: RateBranch::SampleSaturated,
        }
    } else if m_eff == dims.m {
        Rate {
            value: s2 * dims.m as f64 / dims.n as f64,
            branch: RateBranch::FullDictionary,
        }
    } else if m_eff == 1 {
        Rate {
            value: (t * t).max(s2 / dims.n as f64).min(s2),
            branch: RateBranch::SingleTerm,
        }
    } else {
        Rate {
            value: intermediate_shape(dims, q, t).min(s2),
            branch: RateBranch::Intermediate,
        }
    }
}

fn min_rate(a: Rate, b: Rate) -> Rate {
    if b.value < a.value {
        b
    } else {
        a
    }
}

/// The random-design rate `Ψ^F`.
pub fn psi_rate(dims: &ProblemDims, budget: &SparsityBudget) -> Rate {
    match budget.case {
        ConstraintCase::LqOnly => psi_lq(dims, budget.q, budget.radius()),
        ConstraintCase::L0Only => Rate {
            value: hard_sparsity_shape(dims, budget.sparsity()).min(dims.sigma2()),
            branch: RateBranch::HardSparsity,
        },
        ConstraintCase::Joint => min_rate(
            psi_rate(dims, &budget.lq_part()),
            psi_rate(dims, &budget.l0_part()),
        ),
    }
}

/// The fixed-design rate `Φ^F`; `full_rank` is the rank `r_M` of the full
/// design matrix.
pub fn phi_rate(dims: &ProblemDims, budget: &SparsityBudget, full_rank: usize) -> Result<Rate> {
    if full_rank == 0 || full_rank > dims.cap() {
        return Err(Error::Domain(format!(
            "full rank must lie in [1, min(n, M)] = [1, {}], got {full_rank}",
            dims.cap()
        )));
    }
    Ok(phi_unchecked(dims, budget, full_rank))
}

fn phi_unchecked(dims: &ProblemDims, budget: &SparsityBudget, full_rank: usize) -> Rate {
    let rank_cap = dims.sigma2() * full_rank as f64 / dims.n as f64;
    match budget.case {
        ConstraintCase::LqOnly => {
            let (q, t) = (budget.q, budget.radius());
            let m_eff = lq_effective_size(dims, q, t);
            if m_eff == dims.cap() {
                Rate {
                    value: rank_cap,
                    branch: RateBranch::FullDictionary,
                }
            } else if m_eff == 1 {
                Rate {
                    value: (t * t).max(dims.sigma2() / dims.n as f64).min(rank_cap),
                    branch: RateBranch::SingleTerm,
                }
            } else {
                Rate {
                    value: intermediate_shape(dims, q, t).min(rank_cap),
                    branch: RateBranch::Intermediate,
                }
            }
        }
        ConstraintCase::L0Only => Rate {
            value: hard_sparsity_shape(dims, budget.sparsity()).min(rank_cap),
            branch: RateBranch::HardSparsity,
        },
        ConstraintCase::Joint => min_rate(
            phi_unchecked(dims, &budget.lq_part(), full_rank),
            phi_unchecked(dims, &budget.l0_part(), full_rank),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub m_ideal: usize,
    pub m_eff: usize,
    pub ser: f64,
    pub reg: f64,
    pub psi: f64,
    pub psi_branch: RateBranch,
    pub phi: Option<f64>,
    pub phi_branch: Option<RateBranch>,
}

/// All rate quantities for one budget. `phi` is only filled when the full
/// design rank is known.
pub fn rate_report(
    dims: &ProblemDims,
    budget: &SparsityBudget,
    full_rank: Option<usize>,
) -> Result<RateReport> {
    budget.validate_for(dims)?;
    let m_ideal = ideal_model_size(dims, budget);
    let m_eff = effective_model_size(dims, budget);
    let psi = psi_rate(dims, budget);
    let phi = full_rank.map(|r| phi_rate(dims, budget, r)).transpose()?;
    Ok(RateReport {
        m_ideal,
        m_eff,
        ser: ser(m_eff, dims.m),
        reg: reg_rate_at(m_eff, dims),
        psi: psi.value,
        psi_branch: psi.branch,
        phi: phi.map(|r| r.value),
        phi_branch: phi.map(|r| r.branch),
    })
}
