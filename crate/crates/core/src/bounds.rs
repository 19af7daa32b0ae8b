//! Bounds on `θ(τ)` and on the gap between the tail dependence coefficients
//! of `H` and `Ĥ`.

use serde::Serialize;

use crate::counts::EventKind;
use crate::domain::{IndexSet, M4Spec, TauVector, MAX_DIM};
use crate::error::{Error, Result};
use crate::theory::{m4_gamma, m4_marginal_thetas, m4_theta, m4_theta_gamma};

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::OutOfRange { what: "gamma", detail: format!("{gamma} must be positive") });
    }
    Ok(())
}

fn check_len(thetas: &[f64], tau: &TauVector) -> Result<()> {
    if thetas.len() != tau.dim() {
        return Err(Error::DimensionMismatch { expected: tau.dim(), got: thetas.len() });
    }
    Ok(())
}

/// `(⋁ θ_j τ_j / Γ, Σ θ_j τ_j / Γ)`.
pub fn classic_bounds(thetas: &[f64], tau: &TauVector, gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    check_len(thetas, tau)?;
    let terms = thetas.iter().zip(tau.values()).map(|(t, x)| t * x);
    let lower = terms.clone().fold(0.0, f64::max) / gamma;
    let upper = terms.sum::<f64>() / gamma;
    Ok((lower, upper))
}

/// Upper bound subtracting the common-level cluster rates of the nested sets
/// `{j, …, d}`, `j = 1..d-1`. `chain[j]` is `θ**τ**` of `{j+1, …, d}` in
/// one-based terms, i.e. the set starting at zero-based margin `j`.
pub fn new_upper_bound(thetas: &[f64], chain: &[f64], tau: &TauVector, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_len(thetas, tau)?;
    let d = tau.dim();
    if chain.len() != d.saturating_sub(1) {
        return Err(Error::DimensionMismatch { expected: d.saturating_sub(1), got: chain.len() });
    }
    let sum: f64 = thetas.iter().zip(tau.values()).map(|(t, x)| t * x).sum();
    Ok((sum - chain.iter().sum::<f64>()) / gamma)
}

/// Largest chain sum `Σ_{j<d} w({π_j, …, π_d})` over orderings `π`, by
/// dynamic programming over subsets. `w` is indexed by subset bitmask.
pub fn max_chain_sum(w: &[f64], d: usize) -> Result<f64> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::OutOfRange { what: "dimension", detail: format!("{d} is not in 1..={MAX_DIM}") });
    }
    if w.len() != 1 << d {
        return Err(Error::DimensionMismatch { expected: 1 << d, got: w.len() });
    }
    // best[S]: largest chain sum starting at S and shrinking to a single member
    let mut best = vec![0.0f64; 1 << d];
    for s in 1usize..(1 << d) {
        if s.count_ones() < 2 {
            continue;
        }
        let mut tail = f64::NEG_INFINITY;
        let mut rest = s;
        while rest != 0 {
            let bit = rest & rest.wrapping_neg();
            tail = tail.max(best[s ^ bit]);
            rest ^= bit;
        }
        best[s] = w[s] + tail;
    }
    Ok(best[(1 << d) - 1])
}

/// Best Prop-3(b)-type bound over all margin orderings; `star2_terms` holds
/// `θ**τ**` of every subset, indexed by bitmask (entries of size < 2 unused).
pub fn perm_upper_bound(thetas: &[f64], star2_terms: &[f64], tau: &TauVector, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_len(thetas, tau)?;
    let sum: f64 = thetas.iter().zip(tau.values()).map(|(t, x)| t * x).sum();
    Ok((sum - max_chain_sum(star2_terms, tau.dim())?) / gamma)
}

/// `(Γ(1) - ⋁_j (1 - θ_j)) ∧ Σ_j θ_j`, a bound on `θ(1)Γ(1)`.
pub fn ehlert_schlather_bound(gamma_one: f64, thetas: &[f64]) -> Result<f64> {
    if gamma_one < 0.0 || thetas.iter().any(|t| *t < 0.0) {
        return Err(Error::InvalidInput("inputs must be nonnegative".into()));
    }
    let worst = thetas.iter().map(|t| 1.0 - t).fold(f64::NEG_INFINITY, f64::max);
    Ok((gamma_one - worst).min(thetas.iter().sum()))
}

/// `max{θ**τ**(1/(θ_j ∨ θ_j')) - 2 + Γ(1,1), 1 - Γ(1,1)}`, a lower bound on
/// `|χ^H - χ^Ĥ|`.
pub fn chi_gap_lower_bound(theta_tau_star2: f64, gamma11: f64) -> Result<f64> {
    if !(theta_tau_star2 >= 0.0 && (1.0..=2.0).contains(&gamma11)) {
        return Err(Error::InvalidInput(format!(
            "need θ**τ** >= 0 and Γ(1,1) in [1, 2], got {theta_tau_star2} and {gamma11}"
        )));
    }
    Ok((theta_tau_star2 - 2.0 + gamma11).max(1.0 - gamma11))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    ClosedForm,
    Estimate,
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub source: BoundSource,
    pub tau: Vec<f64>,
    pub gamma: f64,
    pub thetas: Vec<f64>,
    /// `θ**τ**` of `{j, …, d}` for `j = 1..d-1`.
    pub star2_chain: Vec<f64>,
    pub classic_lower: f64,
    pub classic_upper: f64,
    pub new_upper: f64,
    pub perm_upper: f64,
    /// Bound on `θ(1)Γ(1)`; only for `τ = (1, …, 1)`.
    pub es_upper_theta_gamma: Option<f64>,
    /// Exact `θ(τ)` or its estimate.
    pub theta_reference: Option<f64>,
    /// `perm_upper > classic_upper`, reported rather than asserted.
    pub perm_exceeds_classic: bool,
}

impl BoundsReport {
    /// Assembles a report from one consistent set of inputs. `star2_terms`
    /// is `θ**τ**` by subset bitmask.
    pub fn from_inputs(
        source: BoundSource,
        tau: &TauVector,
        gamma: f64,
        thetas: &[f64],
        star2_terms: &[f64],
        theta_reference: Option<f64>,
    ) -> Result<Self> {
        let d = tau.dim();
        if star2_terms.len() != 1 << d {
            return Err(Error::DimensionMismatch { expected: 1 << d, got: star2_terms.len() });
        }
        let chain: Vec<f64> = (0..d.saturating_sub(1))
            .map(|j| IndexSet::suffix(j, d).map(|s| star2_terms[s.mask() as usize]))
            .collect::<Result<_>>()?;
        let (classic_lower, classic_upper) = classic_bounds(thetas, tau, gamma)?;
        let new_upper = new_upper_bound(thetas, &chain, tau, gamma)?;
        let perm_upper = perm_upper_bound(thetas, star2_terms, tau, gamma)?;
        let at_one = tau.values().iter().all(|t| *t == 1.0);
        let es_upper_theta_gamma = if at_one { Some(ehlert_schlather_bound(gamma, thetas)?) } else { None };
        Ok(Self {
            source,
            tau: tau.values().to_vec(),
            gamma,
            thetas: thetas.to_vec(),
            star2_chain: chain,
            classic_lower,
            classic_upper,
            new_upper,
            perm_upper,
            es_upper_theta_gamma,
            theta_reference,
            perm_exceeds_classic: perm_upper > classic_upper,
        })
    }
}

/// `θ**τ**` of every subset from the M4 closed forms, by bitmask.
pub fn m4_star2_terms(spec: &M4Spec, tau: &TauVector) -> Result<Vec<f64>> {
    let d = spec.dim();
    let mut w = vec![0.0; 1 << d];
    for set in IndexSet::all_nonempty(d)? {
        w[set.mask() as usize] = m4_theta_gamma(spec, tau, &set, EventKind::Star2)?;
    }
    Ok(w)
}

/// Closed-form bounds report for an M4 spec.
pub fn m4_bounds(spec: &M4Spec, tau: &TauVector) -> Result<BoundsReport> {
    let d = spec.dim();
    let full = IndexSet::full(d)?;
    let gamma = m4_gamma(spec, tau, &full, EventKind::Union)?;
    let theta = m4_theta(spec, tau, &full, EventKind::Union)?;
    let thetas = m4_marginal_thetas(spec);
    let w = m4_star2_terms(spec, tau)?;
    BoundsReport::from_inputs(BoundSource::ClosedForm, tau, gamma, &thetas, &w, Some(theta))
}
