//! Rank-based tail dependence estimators for a margin pair: `χ`, `χ̄`, the
//! madogram and the Ledford–Tawn index `η`.
//!
//! Everything is computed from the rank CDF `F̂(x) = #{X ≤ x} / (n + 1)`, so
//! results are unchanged by strictly increasing transforms of either margin.

use serde::Serialize;

use crate::domain::SeriesMatrix;
use crate::error::{Error, Result};

/// Rank CDF of each entry; tied values share the largest rank.
pub fn rank_cdf(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let denom = n as f64 + 1.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            out[i] = end as f64 / denom;
        }
        start = end;
    }
    out
}

/// Rank CDFs of one margin pair.
#[derive(Debug, Clone)]
pub struct PairRanks {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl PairRanks {
    pub fn new(sample: &SeriesMatrix, pair: (usize, usize)) -> Result<Self> {
        let d = sample.d();
        let (j, jp) = pair;
        if j >= d || jp >= d || j == jp {
            return Err(Error::InvalidInput(format!(
                "pair ({}, {}) must name two distinct margins of {d}",
                j + 1,
                jp + 1
            )));
        }
        if sample.n() < 2 {
            return Err(Error::InvalidInput("need at least 2 rows".into()));
        }
        Ok(Self { first: rank_cdf(&sample.column(j)), second: rank_cdf(&sample.column(jp)) })
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    /// `Ĉ(u, u)`.
    pub fn copula_diag(&self, u: f64) -> f64 {
        self.both_below(u) as f64 / self.n() as f64
    }

    fn both_below(&self, u: f64) -> usize {
        self.first.iter().zip(&self.second).filter(|(a, b)| **a <= u && **b <= u).count()
    }

    fn both_above(&self, u: f64) -> usize {
        self.first.iter().zip(&self.second).filter(|(a, b)| **a > u && **b > u).count()
    }

    fn second_above(&self, u: f64) -> usize {
        self.second.iter().filter(|b| **b > u).count()
    }
}

fn check_u(u: f64) -> Result<()> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::OutOfRange { what: "u", detail: format!("{u} is not in (0, 1)") });
    }
    Ok(())
}

fn check_grid(u_grid: &[f64]) -> Result<()> {
    if u_grid.is_empty() {
        return Err(Error::InvalidInput("u grid is empty".into()));
    }
    for &u in u_grid {
        check_u(u)?;
    }
    if u_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("u grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Share of rows with both margins at or below `u` on the rank scale.
pub fn empirical_copula_diag(sample: &SeriesMatrix, pair: (usize, usize), u: f64) -> Result<f64> {
    check_u(u)?;
    Ok(PairRanks::new(sample, pair)?.copula_diag(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TailSettings {
    /// Joint exceedances required at the grid point used as point estimate.
    pub min_joint: usize,
    /// Report the intercept of a least-squares line in `1 - u` as well.
    pub extrapolate: bool,
}

impl Default for TailSettings {
    fn default() -> Self {
        Self { min_joint: 50, extrapolate: false }
    }
}

pub const DEFAULT_U_GRID: [f64; 7] = [0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiPoint {
    pub u: f64,
    pub copula_diag: f64,
    /// `2 - log Ĉ(u,u) / log u`.
    pub chi: f64,
    /// `#{both > u} / #{second > u}`.
    pub chi_conditional: Option<f64>,
    pub joint_exceedances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiCurve {
    pub points: Vec<ChiPoint>,
    pub point_u: Option<f64>,
    pub point_estimate: Option<f64>,
    pub extrapolated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChibarPoint {
    pub u: f64,
    pub chibar: f64,
    pub joint_exceedances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChibarCurve {
    pub points: Vec<ChibarPoint>,
    pub point_u: Option<f64>,
    pub point_estimate: Option<f64>,
    pub extrapolated: Option<f64>,
}

/// Intercept at `u = 1` of the least-squares line through `(1 - u, y)`.
fn intercept(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| 1.0 - p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (1.0 - p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (1.0 - p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(my - sxy / sxx * mx)
}

/// Picks the value at the largest `u` whose joint exceedance count reaches
/// `min_joint`.
fn pick<'a>(points: impl DoubleEndedIterator<Item = (f64, f64, usize)> + 'a, min_joint: usize) -> (Option<f64>, Option<f64>) {
    points.rev().find(|p| p.2 >= min_joint).map_or((None, None), |p| (Some(p.0), Some(p.1)))
}

pub fn chi_curve(ranks: &PairRanks, u_grid: &[f64], settings: TailSettings) -> Result<ChiCurve> {
    check_grid(u_grid)?;
    let mut points = Vec::new();
    for &u in u_grid {
        let c = ranks.copula_diag(u);
        if c <= 0.0 {
            continue;
        }
        let joint = ranks.both_above(u);
        let marg = ranks.second_above(u);
        points.push(ChiPoint {
            u,
            copula_diag: c,
            chi: 2.0 - c.ln() / u.ln(),
            chi_conditional: (marg > 0).then(|| joint as f64 / marg as f64),
            joint_exceedances: joint,
        });
    }
    let (point_u, point_estimate) = pick(points.iter().map(|p| (p.u, p.chi, p.joint_exceedances)), settings.min_joint);
    let extrapolated = if settings.extrapolate {
        intercept(&points.iter().filter(|p| p.joint_exceedances >= settings.min_joint).map(|p| (p.u, p.chi)).collect::<Vec<_>>())
    } else {
        None
    };
    Ok(ChiCurve { points, point_u, point_estimate, extrapolated })
}

/// `χ̂(u)` over `u_grid` and the point estimate.
pub fn estimate_chi(sample: &SeriesMatrix, pair: (usize, usize), u_grid: &[f64], settings: TailSettings) -> Result<ChiCurve> {
    chi_curve(&PairRanks::new(sample, pair)?, u_grid, settings)
}

pub fn chibar_curve(ranks: &PairRanks, u_grid: &[f64], settings: TailSettings) -> Result<ChibarCurve> {
    check_grid(u_grid)?;
    let n = ranks.n() as f64;
    let mut points = Vec::new();
    for &u in u_grid {
        let joint = ranks.both_above(u);
        if joint == 0 {
            continue;
        }
        let surv = joint as f64 / n;
        let chibar = (2.0 * (1.0 - u).ln() / surv.ln() - 1.0).clamp(-1.0, 1.0);
        if chibar.is_finite() {
            points.push(ChibarPoint { u, chibar, joint_exceedances: joint });
        }
    }
    let (point_u, point_estimate) =
        pick(points.iter().map(|p| (p.u, p.chibar, p.joint_exceedances)), settings.min_joint);
    let extrapolated = if settings.extrapolate {
        intercept(&points.iter().filter(|p| p.joint_exceedances >= settings.min_joint).map(|p| (p.u, p.chibar)).collect::<Vec<_>>())
    } else {
        None
    };
    Ok(ChibarCurve { points, point_u, point_estimate, extrapolated })
}

/// `χ̄̂(u) = 2 log(1-u) / log Ŝ(u) - 1` with `Ŝ(u)` the share of rows where
/// both margins exceed `u`, clipped to `[-1, 1]`.
pub fn estimate_chibar(sample: &SeriesMatrix, pair: (usize, usize), u_grid: &[f64], settings: TailSettings) -> Result<ChibarCurve> {
    chibar_curve(&PairRanks::new(sample, pair)?, u_grid, settings)
}

pub fn madogram(ranks: &PairRanks) -> f64 {
    let sum: f64 = ranks.first.iter().zip(&ranks.second).map(|(a, b)| (a - b).abs()).sum();
    0.5 * sum / ranks.n() as f64
}

/// `½ mean |F̂_j - F̂_j'|`.
pub fn estimate_madogram(sample: &SeriesMatrix, pair: (usize, usize)) -> Result<f64> {
    Ok(madogram(&PairRanks::new(sample, pair)?))
}

/// `ε = (1 + 2ν) / (1 - 2ν)`.
pub fn extremal_coeff_from_madogram(nu: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::OutOfRange { what: "madogram", detail: format!("{nu} is not in [0, 1/2)") });
    }
    Ok((1.0 + 2.0 * nu) / (1.0 - 2.0 * nu))
}

/// Default number of upper order statistics for the `η` fit, `floor(n^0.6)`.
pub fn default_eta_k(n: usize) -> usize {
    (n as f64).powf(0.6).floor() as usize
}

pub fn eta_from_ranks(ranks: &PairRanks, k: usize) -> Result<f64> {
    let n = ranks.n();
    if k < 10 || k >= n {
        return Err(Error::OutOfRange { what: "k", detail: format!("{k} must be in 10..{n}") });
    }
    let frechet = |f: f64| -1.0 / f.ln();
    let mut t: Vec<f64> = ranks.first.iter().zip(&ranks.second).map(|(a, b)| frechet(a.min(*b))).collect();
    t.sort_by(|a, b| b.total_cmp(a));
    let base = t[k].ln();
    Ok(t[..k].iter().map(|x| x.ln() - base).sum::<f64>() / k as f64)
}

/// Hill estimate over the `k` largest values of `min(X̃_j, X̃_j')`, where
/// `X̃ = -1/log F̂` puts both margins on the unit-Fréchet scale.
pub fn estimate_eta(sample: &SeriesMatrix, pair: (usize, usize), k: usize) -> Result<f64> {
    eta_from_ranks(&PairRanks::new(sample, pair)?, k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    /// One-based margins.
    pub pair: (usize, usize),
    pub n: usize,
    pub chi: ChiCurve,
    pub chibar: ChibarCurve,
    pub madogram: f64,
    pub extremal_coeff: Option<f64>,
    /// `2 - ε̂` with `ε̂` from the madogram.
    pub chi_from_madogram: Option<f64>,
    pub eta: Option<f64>,
    pub eta_k: usize,
}

/// Every tail estimate of one pair.
pub fn tail_report(
    sample: &SeriesMatrix,
    pair: (usize, usize),
    u_grid: &[f64],
    eta_k: Option<usize>,
    settings: TailSettings,
) -> Result<TailReport> {
    let ranks = PairRanks::new(sample, pair)?;
    let nu = madogram(&ranks);
    let eps = extremal_coeff_from_madogram(nu).ok();
    let k = eta_k.unwrap_or_else(|| default_eta_k(ranks.n()));
    let eta = match eta_from_ranks(&ranks, k) {
        Ok(v) => Some(v),
        Err(e) if eta_k.is_none() => {
            log::info!("eta not estimated: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(TailReport {
        pair: (pair.0 + 1, pair.1 + 1),
        n: ranks.n(),
        chi: chi_curve(&ranks, u_grid, settings)?,
        chibar: chibar_curve(&ranks, u_grid, settings)?,
        madogram: nu,
        extremal_coeff: eps,
        chi_from_madogram: eps.map(|e| 2.0 - e),
        eta,
        eta_k: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::MarginTag;
    use crate::simulate::{simulate_iid_frechet, Seed};
    use proptest::prelude::*;

    fn comonotone(n: usize) -> SeriesMatrix {
        let s = simulate_iid_frechet(n, 1, Seed::new(8)).unwrap();
        s.select_columns(&[0, 0]).unwrap()
    }

    #[test]
    fn rank_cdf_ties_and_order() {
        assert_eq!(rank_cdf(&[3.0, 1.0, 2.0]), vec![0.75, 0.25, 0.5]);
        assert_eq!(rank_cdf(&[1.0, 1.0, 2.0]), vec![0.5, 0.5, 0.75]);
    }

    #[test]
    fn comonotone_sample() {
        let s = comonotone(20_000);
        let n = s.n() as f64;
        for u in [0.3, 0.9, 0.99] {
            let c = empirical_copula_diag(&s, (0, 1), u).unwrap();
            assert!((c - u).abs() <= 1.0 / (n + 1.0) + 1e-12);
        }
        let chi = estimate_chi(&s, (0, 1), &DEFAULT_U_GRID, TailSettings::default()).unwrap();
        assert!((chi.point_estimate.unwrap() - 1.0).abs() < 0.01);
        let cb = estimate_chibar(&s, (0, 1), &DEFAULT_U_GRID, TailSettings::default()).unwrap();
        assert!((cb.point_estimate.unwrap() - 1.0).abs() < 0.01);
        assert!(estimate_madogram(&s, (0, 1)).unwrap() < 1e-12);
        let eta = estimate_eta(&s, (0, 1), default_eta_k(s.n())).unwrap();
        assert!((eta - 1.0).abs() < 0.1, "{eta}");
    }

    #[test]
    fn independent_sample() {
        let s = simulate_iid_frechet(200_000, 2, Seed::new(9)).unwrap();
        let c = empirical_copula_diag(&s, (0, 1), 0.8).unwrap();
        assert!((c - 0.64).abs() < 0.01);
        let chi = estimate_chi(&s, (0, 1), &DEFAULT_U_GRID, TailSettings::default()).unwrap();
        assert!(chi.point_estimate.unwrap().abs() < 0.05);
        let cb = estimate_chibar(&s, (0, 1), &DEFAULT_U_GRID, TailSettings::default()).unwrap();
        assert!(cb.point_estimate.unwrap().abs() < 0.05);
        let nu = estimate_madogram(&s, (0, 1)).unwrap();
        assert!((nu - 1.0 / 6.0).abs() < 0.005);
        let eta = estimate_eta(&s, (0, 1), default_eta_k(s.n())).unwrap();
        assert!((eta - 0.5).abs() < 0.05, "{eta}");
    }

    #[test]
    fn madogram_inversion() {
        assert_eq!(extremal_coeff_from_madogram(0.0).unwrap(), 1.0);
        assert!((extremal_coeff_from_madogram(1.0 / 6.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(extremal_coeff_from_madogram(0.5).is_err());
    }

    #[test]
    fn argument_checks() {
        let s = comonotone(100);
        assert!(empirical_copula_diag(&s, (0, 1), 1.0).is_err());
        assert!(empirical_copula_diag(&s, (0, 0), 0.5).is_err());
        assert!(estimate_chi(&s, (0, 1), &[0.9, 0.5], TailSettings::default()).is_err());
        assert!(estimate_eta(&s, (0, 1), 9).is_err());
        assert!(estimate_eta(&s, (0, 1), 100).is_err());
    }

    #[test]
    fn chi_identity_with_exponent() {
        let s = simulate_iid_frechet(5000, 2, Seed::new(3)).unwrap();
        let r = PairRanks::new(&s, (0, 1)).unwrap();
        for p in chi_curve(&r, &DEFAULT_U_GRID, TailSettings::default()).unwrap().points {
            assert_eq!(2.0 - p.chi, p.copula_diag.ln() / p.u.ln());
        }
    }

    #[test]
    fn extrapolation_of_a_line() {
        let pts = [(0.5, 0.5), (0.8, 0.8), (0.9, 0.9)];
        assert!((intercept(&pts).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rank_invariance(seed in any::<u64>(), a in 0.1f64..5.0, p in 0.2f64..3.0) {
            let s = simulate_iid_frechet(500, 2, Seed::new(seed)).unwrap();
            let mixed = s.map_margins(|j, x| if j == 0 { a * x.powf(p) } else { x.ln() }, MarginTag::Unknown).unwrap();
            let grid = DEFAULT_U_GRID;
            let st = TailSettings { min_joint: 5, extrapolate: true };
            let one = tail_report(&s, (0, 1), &grid, Some(20), st).unwrap();
            let two = tail_report(&mixed, (0, 1), &grid, Some(20), st).unwrap();
            prop_assert_eq!(&one, &two);
            prop_assert!(one.madogram >= 0.0 && one.madogram <= 0.5);
        }
    }
}
