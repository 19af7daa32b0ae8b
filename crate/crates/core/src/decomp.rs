//! Block estimates of the decomposition terms of `θ(τ)Γ(τ)` and residual
//! checks of the two decomposition identities.
//!
//! Every term is a rate `n/(r_n c) · P̂(block event)` or a conditional
//! version of it. At finite `n` the reconstructions differ from the left-hand
//! side only through the `P̂(N* = 0)` factor dropped by conditioning.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::block_bootstrap_se;
use crate::counts::{block_positive, EventKind};
use crate::domain::{IndexSet, SeriesMatrix, TauVector, MAX_DIM};
use crate::error::{Error, Result};
use crate::estimate::mei::{Estimate, EstimationSettings, Prepared};

/// Per-block positivity flags for the decomposition, pooled over
/// replicates of equal length.
///
/// For block `b`: bit `j` of `margins` is set when margin `j` exceeds its own
/// level somewhere in the block; bit `j` of `star` (`star2`) when the joint
/// (common-level) event of the suffix set `{j, …, d-1}` occurs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompBlocks {
    d: usize,
    tau: TauVector,
    n: usize,
    r_n: usize,
    k_per_series: usize,
    scale: f64,
    margins: Vec<u32>,
    star: Vec<u32>,
    star2: Vec<u32>,
}

impl DecompBlocks {
    pub fn new(series: &SeriesMatrix, tau: &TauVector, settings: &EstimationSettings) -> Result<Self> {
        let d = series.d();
        if d > MAX_DIM {
            return Err(Error::OutOfRange { what: "dimension", detail: format!("{d} > {MAX_DIM}") });
        }
        let prep = Prepared::new(series, tau, settings)?;
        let mut queries = Vec::with_capacity(3 * d);
        for j in 0..d {
            queries.push((IndexSet::singleton(j, d)?, EventKind::Union));
        }
        for j in 0..d {
            queries.push((IndexSet::suffix(j, d)?, EventKind::Star));
        }
        for j in 0..d {
            queries.push((IndexSet::suffix(j, d)?, EventKind::Star2));
        }
        let flags = block_positive(&prep.masks, &prep.blocks, &queries)?;
        let field = |q: usize| -> Vec<u32> {
            let low = (1u64 << d) - 1;
            flags.iter().map(|f| ((f >> (q * d)) & low) as u32).collect()
        };
        Ok(Self {
            d,
            tau: tau.clone(),
            n: prep.blocks.n(),
            r_n: prep.blocks.r_n(),
            k_per_series: prep.blocks.k_n(),
            scale: prep.scale,
            margins: field(0),
            star: field(1),
            star2: field(2),
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.margins.len()
    }

    pub fn merge(mut self, other: &DecompBlocks) -> Result<Self> {
        let same = self.d == other.d
            && self.tau == other.tau
            && self.n == other.n
            && self.k_per_series == other.k_per_series
            && self.scale == other.scale;
        if !same {
            return Err(Error::InvalidInput("replicates differ in dimension, tau, length, blocks or level scale".into()));
        }
        self.margins.extend_from_slice(&other.margins);
        self.star.extend_from_slice(&other.star);
        self.star2.extend_from_slice(&other.star2);
        Ok(self)
    }

    fn rate_factor(&self) -> f64 {
        self.n as f64 / (self.r_n as f64 * self.scale)
    }

    /// Term values over a multiset of blocks, in [`TermLayout`] order.
    fn terms(&self, layout: &TermLayout, idx: &mut dyn Iterator<Item = usize>) -> Vec<f64> {
        let d = self.d;
        let g = self.rate_factor();
        let mut blocks = 0usize;
        let mut any = 0usize;
        let mut margin_pos = vec![0usize; d];
        let mut star_pos = vec![0usize; d];
        let mut star2_pos = vec![0usize; d];
        let mut star_not_star2 = vec![0usize; d];
        let mut star_zero = vec![0usize; d];
        // caps[key][mask]: blocks with N*_{suffix key} = 0 whose positive
        // margins include `mask`, accumulated by exact mask first
        let mut exact = vec![vec![0usize; 1 << d]; d];
        for b in idx {
            blocks += 1;
            let m = self.margins[b];
            any += (m != 0) as usize;
            for j in 0..d {
                margin_pos[j] += (m >> j & 1) as usize;
                let s = self.star[b] >> j & 1 == 1;
                let s2 = self.star2[b] >> j & 1 == 1;
                star_pos[j] += s as usize;
                star2_pos[j] += s2 as usize;
                star_not_star2[j] += (s && !s2) as usize;
                if !s {
                    star_zero[j] += 1;
                    exact[j][m as usize] += 1;
                }
            }
        }
        // superset sums: caps[key][mask] = Σ_{m ⊇ mask} exact[key][m]
        for cap in exact.iter_mut() {
            for bit in 0..d {
                for mask in 0..1usize << d {
                    if mask >> bit & 1 == 0 {
                        cap[mask] += cap[mask | 1 << bit];
                    }
                }
            }
        }
        let prob = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        let per_block = |a: usize| g * a as f64 / blocks as f64;

        let mut out = vec![f64::NAN; layout.len()];
        out[TermLayout::LHS] = per_block(any);
        for j in 0..d {
            out[layout.theta_tau(j)] = per_block(margin_pos[j]);
            out[layout.theta2star_tau2star(j)] = per_block(star2_pos[j]);
            out[layout.theta1star_gamma_star(j)] = per_block(star_pos[j]);
            out[layout.beta1(j)] = prob(star_not_star2[j], star_pos[j]);
        }
        for mask in 1..1usize << d {
            out[layout.caps(mask)] = g * prob(exact[0][mask], star_zero[0]);
        }
        for j in 0..d.saturating_sub(1) {
            for rest in layout.beta2_sets(j) {
                out[layout.beta2(j, rest)] = g * prob(exact[j][(1 << j) | rest], star_zero[j]);
            }
        }
        out
    }
}

/// Positions of the individual terms in the statistic vector.
#[derive(Debug, Clone)]
struct TermLayout {
    d: usize,
    beta2_offset: Vec<usize>,
    len: usize,
}

impl TermLayout {
    const LHS: usize = 0;

    fn new(d: usize) -> Self {
        let base = 1 + 4 * d + (1 << d) - 1;
        let mut beta2_offset = Vec::new();
        let mut at = base;
        for j in 0..d {
            beta2_offset.push(at);
            // nonempty subsets of {j+1, …, d-1}, indexed by (mask >> (j+1)) - 1
            if j + 1 < d {
                at += (1 << (d - j - 1)) - 1;
            }
        }
        Self { d, beta2_offset, len: at }
    }

    fn len(&self) -> usize {
        self.len
    }

    fn theta_tau(&self, j: usize) -> usize {
        1 + j
    }

    fn theta2star_tau2star(&self, j: usize) -> usize {
        1 + self.d + j
    }

    fn theta1star_gamma_star(&self, j: usize) -> usize {
        1 + 2 * self.d + j
    }

    fn beta1(&self, j: usize) -> usize {
        1 + 3 * self.d + j
    }

    fn caps(&self, mask: usize) -> usize {
        1 + 4 * self.d + mask - 1
    }

    /// Nonempty masks of subsets of `{j+1, …, d-1}`.
    fn beta2_sets(&self, j: usize) -> impl Iterator<Item = usize> {
        let shift = j + 1;
        let count = if shift < self.d { 1usize << (self.d - shift) } else { 1 };
        (1..count).map(move |m| m << shift)
    }

    fn beta2(&self, j: usize, rest: usize) -> usize {
        self.beta2_offset[j] + (rest >> (j + 1)) - 1
    }
}

fn sign(mask: usize) -> f64 {
    if mask.count_ones() % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    /// Split by the joint and common-level processes of the full vector.
    CommonLevel,
    /// Split margin by margin over the nested sets `{j, …, d}`.
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompReport {
    pub identity: Identity,
    pub tau: Vec<f64>,
    pub n: usize,
    pub k_n: usize,
    pub replicates: usize,
    pub level_scale: f64,
    /// `θ̂Γ̂`.
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub residual: f64,
    /// `sqrt(Var*(lhs) + Var*(rhs))` over block resamples.
    pub mc_se: f64,
    /// `|residual| / mc_se`.
    pub z: f64,
    pub terms: BTreeMap<String, Estimate>,
    /// Some term had an empty conditioning event and entered as zero.
    pub partial: bool,
    pub undefined_terms: Vec<String>,
}

fn label(mask: usize, d: usize) -> String {
    IndexSet::from_mask(mask as u32, d).map(|s| s.to_string()).unwrap_or_default()
}

fn suffix_mask(j: usize, d: usize) -> usize {
    ((1usize << d) - 1) & !((1usize << j) - 1)
}

impl DecompBlocks {
    /// Reconstructions of the left-hand side from the term vector.
    fn rhs(&self, layout: &TermLayout, t: &[f64], identity: Identity) -> f64 {
        let d = self.d;
        let z = |x: f64| if x.is_nan() { 0.0 } else { x };
        match identity {
            Identity::CommonLevel => {
                let mut rhs = z(t[layout.theta2star_tau2star(0)]) + z(t[layout.theta1star_gamma_star(0)]) * z(t[layout.beta1(0)]);
                for mask in 1..1usize << d {
                    rhs += sign(mask) * z(t[layout.caps(mask)]);
                }
                rhs
            }
            Identity::Nested => {
                let mut rhs: f64 = (0..d).map(|j| z(t[layout.theta_tau(j)])).sum();
                for j in 0..d.saturating_sub(1) {
                    rhs -= z(t[layout.theta2star_tau2star(j)]);
                    rhs -= z(t[layout.theta1star_gamma_star(j)]) * z(t[layout.beta1(j)]);
                    for rest in layout.beta2_sets(j) {
                        rhs -= sign(rest) * z(t[layout.beta2(j, rest)]);
                    }
                }
                rhs
            }
        }
    }

    /// Named terms entering `identity`.
    fn named(&self, layout: &TermLayout, identity: Identity) -> Vec<(String, usize)> {
        let d = self.d;
        let mut out = Vec::new();
        match identity {
            Identity::CommonLevel => {
                out.push(("theta2star_tau2star".to_string(), layout.theta2star_tau2star(0)));
                out.push(("theta1star_gamma_star".to_string(), layout.theta1star_gamma_star(0)));
                out.push(("beta1".to_string(), layout.beta1(0)));
                for mask in 1..1usize << d {
                    out.push((format!("Theta_{}", label(mask, d)), layout.caps(mask)));
                }
            }
            Identity::Nested => {
                for j in 0..d {
                    out.push((format!("theta_tau_{}", j + 1), layout.theta_tau(j)));
                }
                for j in 0..d.saturating_sub(1) {
                    let s = label(suffix_mask(j, d), d);
                    out.push((format!("theta2star_tau2star_{s}"), layout.theta2star_tau2star(j)));
                    out.push((format!("theta1star_gamma_star_{s}"), layout.theta1star_gamma_star(j)));
                    out.push((format!("beta1_{}", j + 1), layout.beta1(j)));
                    for rest in layout.beta2_sets(j) {
                        out.push((format!("beta2_{}", label((1 << j) | rest, d)), layout.beta2(j, rest)));
                    }
                }
            }
        }
        out
    }

    pub fn report(&self, identity: Identity, settings: &EstimationSettings) -> DecompReport {
        let layout = TermLayout::new(self.d);
        let k = self.n_blocks();
        let stats = |idx: &mut dyn Iterator<Item = usize>| {
            let mut t = self.terms(&layout, idx);
            let rhs = self.rhs(&layout, &t, identity);
            t.push(rhs);
            t
        };
        let point = stats(&mut (0..k));
        let se = block_bootstrap_se(k, settings.bootstrap_resamples, settings.seed, |idx| stats(&mut idx.iter().copied()));
        let se_at = |q: usize| se.get(q).copied().unwrap_or(f64::NAN);
        let rhs_at = layout.len();

        let mut terms = BTreeMap::new();
        let mut undefined_terms = Vec::new();
        for (name, q) in self.named(&layout, identity) {
            let e = Estimate::new(point[q], se_at(q));
            // β1 of a set without joint events multiplies a zero rate
            let harmless = name.starts_with("beta1") && point[q].is_nan();
            if e.value.is_none() && !harmless {
                undefined_terms.push(name.clone());
            }
            terms.insert(name, e);
        }
        let lhs = point[TermLayout::LHS];
        let rhs = point[rhs_at];
        let mc_se = (se_at(TermLayout::LHS).powi(2) + se_at(rhs_at).powi(2)).sqrt();
        let residual = lhs - rhs;
        DecompReport {
            identity,
            tau: self.tau.values().to_vec(),
            n: self.n,
            k_n: self.k_per_series,
            replicates: k / self.k_per_series,
            level_scale: self.scale,
            lhs: Estimate::new(lhs, se_at(TermLayout::LHS)),
            rhs: Estimate::new(rhs, se_at(rhs_at)),
            residual,
            mc_se,
            z: if mc_se > 0.0 { residual.abs() / mc_se } else if residual == 0.0 { 0.0 } else { f64::INFINITY },
            terms,
            partial: !undefined_terms.is_empty(),
            undefined_terms,
        }
    }
}

/// Residual of the first decomposition identity on one series.
pub fn check_prop2_identity(series: &SeriesMatrix, tau: &TauVector, settings: &EstimationSettings) -> Result<DecompReport> {
    Ok(DecompBlocks::new(series, tau, settings)?.report(Identity::CommonLevel, settings))
}

/// Residual of the margin-by-margin identity on one series.
pub fn check_prop3_identity(series: &SeriesMatrix, tau: &TauVector, settings: &EstimationSettings) -> Result<DecompReport> {
    Ok(DecompBlocks::new(series, tau, settings)?.report(Identity::Nested, settings))
}

/// Pools decomposition blocks over replicates generated by `make`.
pub fn decomp_blocks_pooled<F>(replicates: usize, make: F, tau: &TauVector, settings: &EstimationSettings) -> Result<DecompBlocks>
where
    F: Fn(usize) -> Result<SeriesMatrix> + Sync,
{
    let parts: Vec<DecompBlocks> = (0..replicates)
        .into_par_iter()
        .map(|r| DecompBlocks::new(&make(r)?, tau, settings))
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let first = iter.next().ok_or_else(|| Error::InvalidInput("need at least one replicate".into()))?;
    iter.try_fold(first, |acc, p| acc.merge(&p))
}

fn conditional_blocks(
    series: &SeriesMatrix,
    tau: &TauVector,
    queries: &[(IndexSet, EventKind)],
    settings: &EstimationSettings,
) -> Result<(Prepared, Vec<u64>)> {
    let prep = Prepared::new(series, tau, settings)?;
    let flags = block_positive(&prep.masks, &prep.blocks, queries)?;
    Ok((prep, flags))
}

/// `P̂(N**_J = 0 | N*_J > 0)` over blocks.
pub fn estimate_beta1(series: &SeriesMatrix, tau: &TauVector, set: &IndexSet, settings: &EstimationSettings) -> Result<f64> {
    let (_, flags) =
        conditional_blocks(series, tau, &[(*set, EventKind::Star), (*set, EventKind::Star2)], settings)?;
    let pos = flags.iter().filter(|f| *f & 1 == 1).count();
    if pos == 0 {
        return Err(Error::Undefined(format!("no block has a joint exceedance of {set}")));
    }
    let miss = flags.iter().filter(|f| *f & 1 == 1 && *f & 2 == 0).count();
    Ok(miss as f64 / pos as f64)
}

/// `k_n P̂(every margin of J exceeds in the block | N*_D = 0)` as a rate.
pub fn estimate_theta_caps(series: &SeriesMatrix, tau: &TauVector, set: &IndexSet, settings: &EstimationSettings) -> Result<f64> {
    let d = series.d();
    let mut queries = vec![(IndexSet::full(d)?, EventKind::Star)];
    for j in set.iter() {
        queries.push((IndexSet::singleton(j, d)?, EventKind::Union));
    }
    let all_margins = ((1u64 << set.len()) - 1) << 1;
    let (prep, flags) = conditional_blocks(series, tau, &queries, settings)?;
    let zero = flags.iter().filter(|f| *f & 1 == 0).count();
    if zero == 0 {
        return Err(Error::Undefined("every block has a joint exceedance of all margins".into()));
    }
    let hits = flags.iter().filter(|f| *f & 1 == 0 && *f & all_margins == all_margins).count();
    Ok(prep.rate_factor() * hits as f64 / zero as f64)
}
