//! Closed forms for M4 processes, the exact finite-n joint CDF of M4 maxima,
//! and the diagonal quantities of max-stable copulas.
//!
//! With normalized coefficients `b_{l,k,j} = a_{l,k,j} / s_j` and levels
//! `u_j = n s_j / τ_j`, a single latent `Z_{l,m}` drives every extreme event,
//! which gives
//!
//! * `Γ_J(τ)   = Σ_{l,k} max_{j∈J} b τ_j`
//! * `Γ*_J(τ)  = Σ_{l,k} min_{j∈J} b τ_j`
//! * `τ**_J(t) = Σ_{l,k} min_{j∈J} b · t`
//!
//! and, replacing the inner sum over lags by a maximum (one cluster per
//! latent variable), the products `θΓ`, `θ*Γ*` and `θ**τ**`.

use serde::Serialize;

use crate::counts::EventKind;
use crate::domain::{IndexSet, LevelVector, M4Spec, TauVector};
use crate::error::{Error, Result};

fn check_dims(spec: &M4Spec, tau: &TauVector, set: &IndexSet) -> Result<()> {
    if tau.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: tau.dim() });
    }
    if set.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: set.dim() });
    }
    Ok(())
}

/// Value of lag `k` of signature `l` entering the `kind` functional.
fn lag_term(spec: &M4Spec, tau: &TauVector, set: &IndexSet, kind: EventKind, l: usize, k: usize) -> f64 {
    let mut members = set.iter();
    match kind {
        EventKind::Union => members.map(|j| spec.normalized(l, k, j) * tau.get(j)).fold(0.0, f64::max),
        EventKind::Star => members.map(|j| spec.normalized(l, k, j) * tau.get(j)).fold(f64::INFINITY, f64::min),
        EventKind::Star2 => {
            let first = members.next().expect("nonempty index set");
            let b = members.fold(spec.normalized(l, k, first), |acc, j| acc.min(spec.normalized(l, k, j)));
            b * tau.min_over(set)
        }
    }
}

/// `Γ_J(τ)`, `Γ*_J(τ)` or `τ**_J(⋀_J τ)`.
pub fn m4_gamma(spec: &M4Spec, tau: &TauVector, set: &IndexSet, kind: EventKind) -> Result<f64> {
    check_dims(spec, tau, set)?;
    let mut total = 0.0;
    for l in 0..spec.n_signatures() {
        for k in 0..=spec.max_lag() {
            total += lag_term(spec, tau, set, kind, l, k);
        }
    }
    Ok(total)
}

/// The limiting cluster rate `θΓ`, `θ*Γ*` or `θ**τ**` for `kind`.
pub fn m4_theta_gamma(spec: &M4Spec, tau: &TauVector, set: &IndexSet, kind: EventKind) -> Result<f64> {
    check_dims(spec, tau, set)?;
    let mut total = 0.0;
    for l in 0..spec.n_signatures() {
        total += (0..=spec.max_lag()).map(|k| lag_term(spec, tau, set, kind, l, k)).fold(0.0, f64::max);
    }
    Ok(total)
}

/// `θ_J(τ)`, `θ*_J(τ)` or `θ**_J` as the ratio of the cluster rate to the
/// event rate. Undefined when the event rate vanishes.
pub fn m4_theta(spec: &M4Spec, tau: &TauVector, set: &IndexSet, kind: EventKind) -> Result<f64> {
    let gamma = m4_gamma(spec, tau, set, kind)?;
    if gamma <= 0.0 {
        return Err(Error::Undefined(format!("{} rate of {} is zero", kind.name(), set)));
    }
    Ok(m4_theta_gamma(spec, tau, set, kind)? / gamma)
}

/// Marginal extremal indices `θ_j = Σ_l max_k b_{l,k,j}`.
pub fn m4_marginal_thetas(spec: &M4Spec) -> Vec<f64> {
    (0..spec.dim())
        .map(|j| {
            (0..spec.n_signatures())
                .map(|l| (0..=spec.max_lag()).map(|k| spec.normalized(l, k, j)).fold(0.0, f64::max))
                .sum()
        })
        .collect()
}

/// Exact `P(M_{n1} ≤ u_1, …, M_{nd} ≤ u_d)` for the M4 process.
///
/// Latent `Z_{l,m}` with `1-K ≤ m ≤ n` reaches rows `m+k ∈ [1, n]`, so the
/// maxima stay below `u` iff every such `Z_{l,m}` stays below
/// `min u_j / a_{l,k,j}` over its reachable `(k, j)`.
pub fn exact_joint_cdf_m4(spec: &M4Spec, n: usize, levels: &LevelVector) -> Result<f64> {
    Ok((-exact_neg_log_cdf_m4(spec, n, levels)?).exp())
}

/// `-log` of [`exact_joint_cdf_m4`], kept separate to avoid cancellation.
pub fn exact_neg_log_cdf_m4(spec: &M4Spec, n: usize, levels: &LevelVector) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let d = spec.dim();
    if levels.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: levels.dim() });
    }
    let u = levels.values();
    if u.iter().any(|x| x.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::InvalidInput("levels must be positive".into()));
    }
    let window = spec.max_lag() + 1;
    let n = n as i64;
    let big_k = window as i64 - 1;
    let mut total = 0.0;
    for l in 0..spec.n_signatures() {
        // rate[k] = max_j a_{l,k,j} / u_j
        let rate: Vec<f64> =
            (0..window).map(|k| (0..d).map(|j| spec.coef(l, k, j) / u[j]).fold(0.0, f64::max)).collect();
        let reach = |m: i64| -> f64 {
            let lo = (1 - m).max(0) as usize;
            let hi = (n - m).min(big_k) as usize;
            rate[lo..=hi].iter().copied().fold(0.0, f64::max)
        };
        // Latent indices whose whole window is inside [1, n] share one term.
        let interior_lo = 1;
        let interior_hi = n - big_k;
        if interior_hi >= interior_lo {
            total += (interior_hi - interior_lo + 1) as f64 * reach(interior_lo);
            for m in (1 - big_k)..interior_lo {
                total += reach(m);
            }
            for m in (interior_hi + 1)..=n {
                total += reach(m);
            }
        } else {
            for m in (1 - big_k)..=n {
                total += reach(m);
            }
        }
    }
    Ok(total)
}

/// Diagonal exponents of one margin pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairExponents {
    /// One-based margin labels.
    pub pair: (usize, usize),
    /// Exponent of the associated-independence limit `Ĥ`.
    pub eps_hat_h: f64,
    /// Exponent of the limit `H` of the dependent maxima.
    pub eps_h: f64,
    pub chi_hat_h: f64,
    pub chi_h: f64,
    pub nu_hat_h: f64,
    pub nu_h: f64,
}

/// Exponents `ε` with `C(u,u) = u^ε` for both limit laws of every pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MevDiag {
    pub pairs: Vec<PairExponents>,
}

impl MevDiag {
    pub fn pair(&self, j: usize, jp: usize) -> Option<&PairExponents> {
        self.pairs.iter().find(|p| p.pair == (j + 1, jp + 1) || p.pair == (jp + 1, j + 1))
    }
}

/// `ε^Ĥ = Γ_{jj'}(1,1)` and `ε^H = θ_{jj'}Γ_{jj'}(1/θ_j, 1/θ_{j'})`.
pub fn mev_diag_exponents(spec: &M4Spec) -> Result<MevDiag> {
    let d = spec.dim();
    let thetas = m4_marginal_thetas(spec);
    let mut pairs = Vec::new();
    for j in 0..d {
        for jp in j + 1..d {
            let set = IndexSet::new(&[j, jp], d)?;
            let eps_hat_h = m4_gamma(spec, &TauVector::ones(d)?, &set, EventKind::Union)?;
            let inv: Vec<f64> = thetas.iter().map(|t| 1.0 / t).collect();
            let eps_h = m4_theta_gamma(spec, &TauVector::new(inv)?, &set, EventKind::Union)?;
            pairs.push(PairExponents {
                pair: (j + 1, jp + 1),
                eps_hat_h,
                eps_h,
                chi_hat_h: 2.0 - eps_hat_h,
                chi_h: chi_from_theta(eps_h)?,
                nu_hat_h: madogram_from_eps(eps_hat_h)?,
                nu_h: madogram_from_eps(eps_h)?,
            });
        }
    }
    Ok(MevDiag { pairs })
}

const RANGE_TOL: f64 = 1e-12;

/// `χ^H = 2 - θ_{jj'}Γ_{jj'}` evaluated at `(1/θ_j, 1/θ_{j'})`; the argument is
/// that product.
pub fn chi_from_theta(theta_gamma_pair: f64) -> Result<f64> {
    let chi = 2.0 - theta_gamma_pair;
    if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&chi) {
        return Err(Error::OutOfRange {
            what: "chi",
            detail: format!("2 - {theta_gamma_pair} = {chi} lies outside [0, 1]; inputs are inconsistent"),
        });
    }
    Ok(chi.clamp(0.0, 1.0))
}

/// `χ^H` when `Ĥ` has independent margins, so that
/// `Γ_{jj'}(1/θ_j, 1/θ_{j'}) = 1/θ_j + 1/θ_{j'}`.
pub fn chi_independent_hat(theta_pair: f64, theta_j: f64, theta_jp: f64) -> Result<f64> {
    chi_from_theta((1.0 / theta_j + 1.0 / theta_jp) * theta_pair)
}

/// `χ̄` of a copula with diagonal `C(u,u) = u^ε`.
pub fn chibar_from_eps(eps: f64, u: f64) -> f64 {
    // 1 - 2u + u^ε = 2w + expm1(ε log1p(-w)) with w = 1 - u
    let w = 1.0 - u;
    let surv = 2.0 * w + (eps * (-w).ln_1p()).exp_m1();
    2.0 * w.ln() / surv.ln() - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChibarGap {
    pub u: Vec<f64>,
    pub gap: Vec<f64>,
    pub max_gap: f64,
    /// `|lim χ̄^H - lim χ̄^Ĥ|` as `u → 1`.
    pub limit_gap: f64,
}

/// Finite-`u` gap between the `χ̄` of two max-stable diagonals.
pub fn chibar_gap_from_exponents(eps_hat_h: f64, eps_h: f64, u_grid: &[f64]) -> Result<ChibarGap> {
    if let Some(u) = u_grid.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
        return Err(Error::OutOfRange { what: "u", detail: format!("{u} is not in (0, 1)") });
    }
    let gap: Vec<f64> = u_grid.iter().map(|&u| (chibar_from_eps(eps_h, u) - chibar_from_eps(eps_hat_h, u)).abs()).collect();
    // χ̄ → 1 under asymptotic dependence (ε < 2) and → 0 at ε = 2.
    let limit = |eps: f64| -> f64 { if eps < 2.0 - RANGE_TOL { 1.0 } else { 0.0 } };
    Ok(ChibarGap {
        u: u_grid.to_vec(),
        max_gap: gap.iter().copied().fold(0.0, f64::max),
        gap,
        limit_gap: (limit(eps_h) - limit(eps_hat_h)).abs(),
    })
}

/// [`chibar_gap_from_exponents`] for margins `(j, jp)` of an M4 spec.
pub fn chibar_equality_check(spec: &M4Spec, j: usize, jp: usize, u_grid: &[f64]) -> Result<ChibarGap> {
    let diag = mev_diag_exponents(spec)?;
    let p = diag
        .pair(j, jp)
        .ok_or_else(|| Error::InvalidInput(format!("no margin pair ({}, {})", j + 1, jp + 1)))?;
    chibar_gap_from_exponents(p.eps_hat_h, p.eps_h, u_grid)
}

/// Madogram `ν = ½(ε-1)/(ε+1)` of a max-stable copula with exponent `ε`.
pub fn madogram_from_eps(eps: f64) -> Result<f64> {
    if !(1.0 - RANGE_TOL..=2.0 + RANGE_TOL).contains(&eps) {
        return Err(Error::OutOfRange { what: "extremal coefficient", detail: format!("{eps} is not in [1, 2]") });
    }
    let eps = eps.clamp(1.0, 2.0);
    Ok(0.5 * (eps - 1.0) / (eps + 1.0))
}
