//! Shared domain types: rate vectors, index sets, M4 specifications, series,
//! block schemes and normalized levels.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension supported by the bitmask event classification.
pub const MAX_DIM: usize = 16;

const UNIT_MARGIN_TOL: f64 = 1e-12;

/// The argument `τ = (τ_1, …, τ_d)` of the multivariate extremal index.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TauVector(Vec<f64>);

impl TauVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("tau must have at least one entry".into()));
        }
        if let Some(bad) = values.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "tau entries must be positive and finite, got {bad}"
            )));
        }
        Ok(Self(values))
    }

    /// `(1, …, 1)` in dimension `d`.
    pub fn ones(d: usize) -> Result<Self> {
        Self::new(vec![1.0; d])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    /// `c·τ`; `c` must be positive and finite.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|t| t * c).collect())
    }

    /// Smallest entry over the members of `set`.
    pub fn min_over(&self, set: &IndexSet) -> f64 {
        set.iter().map(|j| self.0[j]).fold(f64::INFINITY, f64::min)
    }
}

/// A nonempty subset `J` of the margins `{0, …, d-1}`, stored as a bitmask.
///
/// Margins are zero-based in the API; reports print them one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet {
    mask: u32,
    d: usize,
}

impl IndexSet {
    pub fn new(members: &[usize], d: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::OutOfRange {
                what: "dimension",
                detail: format!("d = {d}, supported range is 1..={MAX_DIM}"),
            });
        }
        if members.is_empty() {
            return Err(Error::InvalidInput("index set must be nonempty".into()));
        }
        let mut mask = 0u32;
        for &j in members {
            if j >= d {
                return Err(Error::InvalidInput(format!("margin {j} outside 0..{d}")));
            }
            if mask & (1 << j) != 0 {
                return Err(Error::InvalidInput(format!("duplicate margin {j} in index set")));
            }
            mask |= 1 << j;
        }
        Ok(Self { mask, d })
    }

    pub fn from_mask(mask: u32, d: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::OutOfRange {
                what: "dimension",
                detail: format!("d = {d}, supported range is 1..={MAX_DIM}"),
            });
        }
        if mask == 0 || (mask >> d) != 0 {
            return Err(Error::InvalidInput(format!("mask {mask:#b} is not a nonempty subset of {d} margins")));
        }
        Ok(Self { mask, d })
    }

    pub fn full(d: usize) -> Result<Self> {
        let mask = if d >= 32 { u32::MAX } else { (1u32 << d) - 1 };
        Self::from_mask(mask, d)
    }

    pub fn singleton(j: usize, d: usize) -> Result<Self> {
        Self::new(&[j], d)
    }

    /// `{j, j+1, …, d-1}`.
    pub fn suffix(j: usize, d: usize) -> Result<Self> {
        let members: Vec<usize> = (j..d).collect();
        Self::new(&members, d)
    }

    /// Every nonempty subset of `d` margins, in increasing mask order.
    pub fn all_nonempty(d: usize) -> Result<Vec<Self>> {
        let full = Self::full(d)?;
        Ok((1..=full.mask).map(|mask| Self { mask, d }).collect())
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, j: usize) -> bool {
        j < self.d && self.mask & (1 << j) != 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.d).filter(move |j| self.mask & (1 << j) != 0)
    }

    pub fn members(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// One-based member list, as printed in reports.
    pub fn one_based(&self) -> Vec<usize> {
        self.iter().map(|j| j + 1).collect()
    }

    /// `(-1)^{|J|+1}`.
    pub fn inclusion_exclusion_sign(&self) -> f64 {
        if self.len() % 2 == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

impl Serialize for IndexSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(serializer)
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|j| j.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// One signature coefficient `a_{l,k,j}` of an M4 process:
/// `X_{i,j} = max_{l,k} a_{l,k,j} Z_{l,i-k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub signature: usize,
    pub lag: usize,
    pub margin: usize,
    pub value: f64,
}

impl Coefficient {
    pub fn new(signature: usize, lag: usize, margin: usize, value: f64) -> Self {
        Self { signature, lag, margin, value }
    }
}

/// A validated multivariate maxima of moving maxima specification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct M4Spec {
    d: usize,
    coefficients: Vec<Coefficient>,
    unit_frechet_margins: bool,
    margin_sums: Vec<f64>,
    #[serde(skip)]
    signature_ids: Vec<usize>,
    #[serde(skip)]
    max_lag: usize,
    /// Dense `[signature][lag][margin]` table of raw coefficients.
    #[serde(skip)]
    dense: Vec<f64>,
}

impl M4Spec {
    pub fn new(d: usize, coefficients: Vec<Coefficient>, unit_frechet_margins: bool) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidSpec(format!("dimension {d} outside 1..={MAX_DIM}")));
        }
        let mut seen = BTreeSet::new();
        for c in &coefficients {
            if !c.value.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "non-finite coefficient at signature {}, lag {}, margin {}",
                    c.signature, c.lag, c.margin
                )));
            }
            if c.value < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "negative coefficient {} at signature {}, lag {}, margin {}",
                    c.value, c.signature, c.lag, c.margin
                )));
            }
            if c.margin >= d {
                return Err(Error::InvalidSpec(format!("margin {} outside 0..{d}", c.margin)));
            }
            if !seen.insert((c.signature, c.lag, c.margin)) {
                return Err(Error::InvalidSpec(format!(
                    "duplicate coefficient at signature {}, lag {}, margin {}",
                    c.signature, c.lag, c.margin
                )));
            }
        }

        let mut margin_sums = vec![0.0; d];
        for c in &coefficients {
            margin_sums[c.margin] += c.value;
        }
        if let Some(j) = margin_sums.iter().position(|s| *s <= 0.0) {
            return Err(Error::InvalidSpec(format!("margin {j} has no positive coefficient")));
        }
        if unit_frechet_margins {
            if let Some(j) = margin_sums.iter().position(|s| (s - 1.0).abs() > UNIT_MARGIN_TOL) {
                return Err(Error::InvalidSpec(format!(
                    "unit Frechet margins requested but margin {j} sums to {}",
                    margin_sums[j]
                )));
            }
        }

        let signature_ids: Vec<usize> = coefficients
            .iter()
            .map(|c| c.signature)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let max_lag = coefficients.iter().map(|c| c.lag).max().unwrap_or(0);
        let mut dense = vec![0.0; signature_ids.len() * (max_lag + 1) * d];
        for c in &coefficients {
            let l = signature_ids.binary_search(&c.signature).expect("signature id collected above");
            dense[(l * (max_lag + 1) + c.lag) * d + c.margin] = c.value;
        }

        Ok(Self {
            d,
            coefficients,
            unit_frechet_margins,
            margin_sums,
            signature_ids,
            max_lag,
            dense,
        })
    }

    /// Re-runs validation; a validated spec maps to itself.
    pub fn validate(self) -> Result<Self> {
        Self::new(self.d, self.coefficients, self.unit_frechet_margins)
    }

    /// Builds a spec from per-signature rows `rows[l][k][j]`.
    pub fn from_dense(rows: &[Vec<Vec<f64>>], unit_frechet_margins: bool) -> Result<Self> {
        let d = rows
            .first()
            .and_then(|lags| lags.first())
            .map(|m| m.len())
            .ok_or_else(|| Error::InvalidSpec("empty coefficient table".into()))?;
        let mut coefficients = Vec::new();
        for (l, lags) in rows.iter().enumerate() {
            for (k, margins) in lags.iter().enumerate() {
                if margins.len() != d {
                    return Err(Error::InvalidSpec(format!(
                        "signature {l}, lag {k} has {} margins, expected {d}",
                        margins.len()
                    )));
                }
                for (j, &a) in margins.iter().enumerate() {
                    if a != 0.0 {
                        coefficients.push(Coefficient::new(l, k, j, a));
                    }
                }
            }
        }
        Self::new(d, coefficients, unit_frechet_margins)
    }

    /// `X1 = 0.7 Z_n ∨ 0.3 Z_{n-2}`, `X2 = 0.7 Z_{n-1} ∨ 0.1 Z_{n-2} ∨ 0.5 Z_{n-3}`.
    pub fn example2() -> Self {
        Self::from_dense(
            &[vec![vec![0.7, 0.0], vec![0.0, 0.7], vec![0.3, 0.1], vec![0.0, 0.5]]],
            false,
        )
        .expect("preset is valid")
    }

    /// Single moving pattern with coefficients `(1/8, 1/8, 6/8)` and
    /// `(2/8, 1/8, 5/8)` on `Z_{n-1}, Z_n, Z_{n+1}`; the lead is re-indexed
    /// as lag 0, which leaves the stationary law unchanged.
    pub fn example3() -> Self {
        Self::from_dense(
            &[vec![
                vec![6.0 / 8.0, 5.0 / 8.0],
                vec![1.0 / 8.0, 1.0 / 8.0],
                vec![1.0 / 8.0, 2.0 / 8.0],
            ]],
            true,
        )
        .expect("preset is valid")
    }

    /// [`M4Spec::example3`] with a second signature carrying `(1/8, 2/8)` at lag 0.
    pub fn example4() -> Self {
        Self::from_dense(
            &[
                vec![vec![6.0 / 8.0, 5.0 / 8.0], vec![1.0 / 8.0, 1.0 / 8.0]],
                vec![vec![1.0 / 8.0, 2.0 / 8.0], vec![0.0, 0.0]],
            ],
            true,
        )
        .expect("preset is valid")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn coefficients(&self) -> &[Coefficient] {
        &self.coefficients
    }

    pub fn unit_frechet_margins(&self) -> bool {
        self.unit_frechet_margins
    }

    /// `s_j = Σ_{l,k} a_{l,k,j}`; margin `j` is Fréchet with scale `s_j`.
    pub fn margin_sums(&self) -> &[f64] {
        &self.margin_sums
    }

    pub fn n_signatures(&self) -> usize {
        self.signature_ids.len()
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Raw coefficient by dense signature index.
    pub fn coef(&self, l: usize, k: usize, j: usize) -> f64 {
        self.dense[(l * (self.max_lag + 1) + k) * self.d + j]
    }

    /// `a_{l,k,j} / s_j`: the coefficient after standardizing margin `j` to unit Fréchet.
    pub fn normalized(&self, l: usize, k: usize, j: usize) -> f64 {
        self.coef(l, k, j) / self.margin_sums[j]
    }
}

/// Bivariate Gaussian copula with unit-Fréchet margins and correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussFrechetSpec {
    rho: f64,
}

impl GaussFrechetSpec {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("correlation must satisfy |rho| < 1, got {rho}")));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dim(&self) -> usize {
        2
    }

    /// Tail index of the joint survivor on the diagonal, `(1 + ρ)/2`.
    pub fn eta(&self) -> f64 {
        (1.0 + self.rho) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginTag {
    UnitFrechet,
    Empirical,
    Unknown,
}

/// An `n × d` row-major sample of a stationary multivariate sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    margin_tag: MarginTag,
}

impl SeriesMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>, margin_tag: MarginTag) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("series must have at least one column".into()));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: data.len() });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at row {}, column {}",
                pos / d + 1,
                pos % d + 1
            )));
        }
        if margin_tag == MarginTag::UnitFrechet {
            if let Some(pos) = data.iter().position(|x| *x <= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "unit Frechet series has non-positive value at row {}, column {}",
                    pos / d + 1,
                    pos % d + 1
                )));
            }
        }
        Ok(Self { n, d, data, margin_tag })
    }

    pub fn from_rows(rows: &[Vec<f64>], margin_tag: MarginTag) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), d, data, margin_tag)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn margin_tag(&self) -> MarginTag {
        self.margin_tag
    }

    pub fn with_margin_tag(mut self, tag: MarginTag) -> Result<Self> {
        if tag == MarginTag::UnitFrechet && self.data.iter().any(|x| *x <= 0.0) {
            return Err(Error::InvalidInput("unit Frechet series must be positive".into()));
        }
        self.margin_tag = tag;
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Applies `f(j, x)` to every entry; the result carries `margin_tag`.
    pub fn map_margins(&self, f: impl Fn(usize, f64) -> f64, margin_tag: MarginTag) -> Result<Self> {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(pos, &x)| f(pos % self.d, x))
            .collect();
        Self::new(self.n, self.d, data, margin_tag)
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.d) {
            return Err(Error::InvalidInput(format!("column {bad} outside 0..{}", self.d)));
        }
        let data = self
            .rows()
            .flat_map(|r| columns.iter().map(move |&j| r[j]))
            .collect();
        Self::new(self.n, columns.len(), data, self.margin_tag)
    }
}

/// `k_n` consecutive blocks of length `r_n = floor(n / k_n)`; the trailing
/// `n - k_n r_n` indices are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockScheme {
    n: usize,
    k_n: usize,
    r_n: usize,
}

impl BlockScheme {
    pub fn new(n: usize, k_n: usize) -> Result<Self> {
        if k_n == 0 || k_n > n {
            return Err(Error::OutOfRange {
                what: "number of blocks",
                detail: format!("k_n = {k_n} with n = {n}; need 1 <= k_n <= n"),
            });
        }
        Ok(Self { n, k_n, r_n: n / k_n })
    }

    /// `k_n = floor(sqrt(n))`.
    pub fn default_for(n: usize) -> Result<Self> {
        let k = ((n as f64).sqrt().floor() as usize).max(1);
        Self::new(n, k.min(n.max(1)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_n(&self) -> usize {
        self.k_n
    }

    pub fn r_n(&self) -> usize {
        self.r_n
    }

    /// Number of observations covered by blocks, `k_n r_n`.
    pub fn used(&self) -> usize {
        self.k_n * self.r_n
    }

    /// Zero-based row range of block `b` (also zero-based).
    pub fn block(&self, b: usize) -> Range<usize> {
        b * self.r_n..(b + 1) * self.r_n
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.k_n).map(|b| self.block(b))
    }
}

pub fn make_blocks(n: usize, k_n: usize) -> Result<BlockScheme> {
    BlockScheme::new(n, k_n)
}

/// How normalized levels `u_j` are derived from `τ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LevelPolicy {
    /// `u_j = n s_j / τ_j`; `s_j = 1` for exact unit-Fréchet margins.
    AnalyticFrechet { scales: Vec<f64> },
    /// `u_j` is the empirical `(1 - τ_j/n)`-quantile of margin `j`.
    EmpiricalQuantile,
}

impl LevelPolicy {
    pub fn unit_frechet(d: usize) -> Self {
        LevelPolicy::AnalyticFrechet { scales: vec![1.0; d] }
    }

    /// Scale-corrected analytic levels for an M4 process.
    pub fn for_m4(spec: &M4Spec) -> Self {
        LevelPolicy::AnalyticFrechet { scales: spec.margin_sums().to_vec() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LevelPolicy::AnalyticFrechet { .. } => "analytic_frechet",
            LevelPolicy::EmpiricalQuantile => "empirical_quantile",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LevelRule {
    Analytic { n: f64, scales: Vec<f64> },
    Empirical { n: f64, sorted: Vec<Vec<f64>> },
    Explicit,
}

/// Normalized levels `u = (u_1, …, u_d)` together with the rule that maps a
/// rate to a level for each margin.
///
/// The rule fixes the common level used by `N**_J`: the level every member of
/// `J` would have at the smallest rate `⋀_{j∈J} τ_j`. For unit-Fréchet analytic
/// levels this is exactly `⋁_{j∈J} u_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelVector {
    u: Vec<f64>,
    tau: Option<TauVector>,
    rule: LevelRule,
    /// `common[key * d + j]`: level of margin `j` at the rate of margin `key`.
    common: Vec<f64>,
    /// Margins ordered from largest to smallest level priority.
    priority: Vec<usize>,
}

impl LevelVector {
    /// Analytic levels `u_j = n s_j / τ_j` without reference to a sample.
    pub fn analytic(n: usize, tau: &TauVector, scales: &[f64]) -> Result<Self> {
        let d = tau.dim();
        if scales.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: scales.len() });
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput("margin scales must be positive".into()));
        }
        if n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        let rule = LevelRule::Analytic { n: n as f64, scales: scales.to_vec() };
        Ok(Self::with_rule(tau.clone(), rule))
    }

    /// Levels given directly; the common level of a set is the largest member level.
    pub fn explicit(u: Vec<f64>) -> Result<Self> {
        if u.is_empty() || u.len() > MAX_DIM {
            return Err(Error::OutOfRange {
                what: "dimension",
                detail: format!("{} levels, supported range is 1..={MAX_DIM}", u.len()),
            });
        }
        if u.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidInput("levels must not be NaN".into()));
        }
        let d = u.len();
        let mut priority: Vec<usize> = (0..d).collect();
        priority.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
        let common = (0..d).flat_map(|key| std::iter::repeat_n(u[key], d)).collect();
        Ok(Self { u, tau: None, rule: LevelRule::Explicit, common, priority })
    }

    fn with_rule(tau: TauVector, rule: LevelRule) -> Self {
        let d = tau.dim();
        let level = |j: usize, rate: f64| -> f64 {
            match &rule {
                LevelRule::Analytic { n, scales } => n * scales[j] / rate,
                LevelRule::Empirical { n, sorted } => empirical_quantile(&sorted[j], 1.0 - rate / n),
                LevelRule::Explicit => unreachable!("explicit levels are built directly"),
            }
        };
        let u: Vec<f64> = (0..d).map(|j| level(j, tau.get(j))).collect();
        let common = (0..d)
            .flat_map(|key| (0..d).map(move |j| (key, j)))
            .map(|(key, j)| level(j, tau.get(key)))
            .collect();
        let mut priority: Vec<usize> = (0..d).collect();
        priority.sort_by(|&a, &b| tau.get(a).total_cmp(&tau.get(b)).then(a.cmp(&b)));
        Self { u, tau: Some(tau), rule, common, priority }
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn tau(&self) -> Option<&TauVector> {
        self.tau.as_ref()
    }

    pub fn policy_name(&self) -> &'static str {
        match self.rule {
            LevelRule::Analytic { .. } => "analytic_frechet",
            LevelRule::Empirical { .. } => "empirical_quantile",
            LevelRule::Explicit => "explicit",
        }
    }

    /// The member of `set` carrying the largest level (smallest rate).
    pub fn common_key(&self, set: &IndexSet) -> usize {
        *self
            .priority
            .iter()
            .find(|&&j| set.contains(j))
            .expect("index set is nonempty and within dimension")
    }

    /// Level that margin `j` must exceed in the `N**` event keyed by `key`.
    pub fn common_level(&self, key: usize, j: usize) -> f64 {
        self.common[key * self.u.len() + j]
    }

    /// Per-member common levels of `set`, in member order.
    pub fn common_levels(&self, set: &IndexSet) -> Vec<f64> {
        let key = self.common_key(set);
        set.iter().map(|j| self.common_level(key, j)).collect()
    }

    /// Sample size the levels were normalized to, if rate-based.
    pub fn normalizing_n(&self) -> Option<f64> {
        match &self.rule {
            LevelRule::Analytic { n, .. } | LevelRule::Empirical { n, .. } => Some(*n),
            LevelRule::Explicit => None,
        }
    }
}

/// Levels for `series` at rates `tau` under `policy`.
pub fn make_levels(series: &SeriesMatrix, tau: &TauVector, policy: &LevelPolicy) -> Result<LevelVector> {
    if tau.dim() != series.d() {
        return Err(Error::DimensionMismatch { expected: series.d(), got: tau.dim() });
    }
    match policy {
        LevelPolicy::AnalyticFrechet { scales } => LevelVector::analytic(series.n(), tau, scales),
        LevelPolicy::EmpiricalQuantile => {
            let n = series.n();
            if let Some(j) = (0..tau.dim()).find(|&j| tau.get(j) >= n as f64) {
                return Err(Error::OutOfRange {
                    what: "tau",
                    detail: format!("tau_{} = {} must be below n = {n} for empirical levels", j + 1, tau.get(j)),
                });
            }
            let mut sorted = Vec::with_capacity(series.d());
            for j in 0..series.d() {
                let mut col = series.column(j);
                col.sort_by(f64::total_cmp);
                if col.first() == col.last() {
                    return Err(Error::InvalidInput(format!(
                        "column {} is constant; empirical levels are undefined",
                        j + 1
                    )));
                }
                sorted.push(col);
            }
            let rule = LevelRule::Empirical { n: n as f64, sorted };
            Ok(LevelVector::with_rule(tau.clone(), rule))
        }
    }
}

/// Quantile of a sorted sample with plotting positions `i/(n+1)` and linear
/// interpolation between order statistics, clamped to the sample range.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = p * (n as f64 + 1.0);
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}
