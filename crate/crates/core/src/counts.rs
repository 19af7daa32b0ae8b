//! Block-level counts of the union, joint and common-level exceedance
//! processes `N_J`, `N*_J` and `N**_J`.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{BlockScheme, IndexSet, LevelVector, SeriesMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Some member of `J` exceeds its own level.
    Union,
    /// Every member of `J` exceeds its own level.
    Star,
    /// Every member of `J` exceeds the common level of `J`.
    Star2,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::Union, EventKind::Star, EventKind::Star2];

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Union => "union",
            EventKind::Star => "star",
            EventKind::Star2 => "star2",
        }
    }
}

/// Per-row exceedance bitmasks. Bit `j` of `own[i]` is set when
/// `X_ij > u_j`; bit `j` of `common[key][i]` when `X_ij` exceeds the common
/// level keyed by margin `key`.
#[derive(Debug, Clone)]
pub struct RowMasks {
    d: usize,
    own: Vec<u32>,
    common: Vec<Vec<u32>>,
    keys: Vec<usize>,
}

impl RowMasks {
    pub fn new(series: &SeriesMatrix, levels: &LevelVector) -> Result<Self> {
        let d = series.d();
        if levels.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: levels.dim() });
        }
        let u = levels.values();
        let mask_of = |row: &[f64], level: &dyn Fn(usize) -> f64| -> u32 {
            row.iter().enumerate().fold(0u32, |m, (j, &x)| if x > level(j) { m | (1 << j) } else { m })
        };
        let own = series.rows().map(|row| mask_of(row, &|j| u[j])).collect();
        // Only keys that some index set can select need a pass over the data.
        let mut keys: Vec<usize> = IndexSet::all_nonempty(d)?.iter().map(|s| levels.common_key(s)).collect();
        keys.sort_unstable();
        keys.dedup();
        let mut common = vec![Vec::new(); d];
        for &key in &keys {
            common[key] = series.rows().map(|row| mask_of(row, &|j| levels.common_level(key, j))).collect();
        }
        let keyed = (0..1u32 << d)
            .map(|mask| match IndexSet::from_mask(mask, d) {
                Ok(set) if mask != 0 => levels.common_key(&set),
                _ => 0,
            })
            .collect();
        Ok(Self { d, own, common, keys: keyed })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.own.len()
    }

    /// Margins exceeding their own level at row `i`.
    pub fn own(&self, i: usize) -> u32 {
        self.own[i]
    }

    /// Whether row `i` belongs to the `kind` event for `set`.
    #[inline]
    pub fn hit(&self, i: usize, set: &IndexSet, kind: EventKind) -> bool {
        let m = set.mask();
        match kind {
            EventKind::Union => self.own[i] & m != 0,
            EventKind::Star => self.own[i] & m == m,
            EventKind::Star2 => self.common[self.keys[m as usize]][i] & m == m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCounts {
    pub kind: EventKind,
    pub set: IndexSet,
    pub per_block: Vec<u64>,
    pub total: u64,
}

/// Counts `kind` events for `set` within each block.
pub fn count_blocks(
    series: &SeriesMatrix,
    levels: &LevelVector,
    set: &IndexSet,
    kind: EventKind,
    blocks: &BlockScheme,
) -> Result<BlockCounts> {
    let masks = RowMasks::new(series, levels)?;
    count_blocks_masked(&masks, set, kind, blocks)
}

/// [`count_blocks`] on precomputed row masks.
pub fn count_blocks_masked(masks: &RowMasks, set: &IndexSet, kind: EventKind, blocks: &BlockScheme) -> Result<BlockCounts> {
    if set.dim() != masks.dim() {
        return Err(Error::DimensionMismatch { expected: masks.dim(), got: set.dim() });
    }
    if blocks.n() != masks.n() {
        return Err(Error::DimensionMismatch { expected: masks.n(), got: blocks.n() });
    }
    let per_block: Vec<u64> = (0..blocks.k_n())
        .into_par_iter()
        .map(|b| blocks.block(b).filter(|&i| masks.hit(i, set, kind)).count() as u64)
        .collect();
    let total = per_block.iter().sum();
    Ok(BlockCounts { kind, set: *set, per_block, total })
}

/// For each block, a bitmask whose bit `q` says whether query `q` had an
/// event in that block. At most 64 queries.
pub fn block_positive(masks: &RowMasks, blocks: &BlockScheme, queries: &[(IndexSet, EventKind)]) -> Result<Vec<u64>> {
    if queries.len() > 64 {
        return Err(Error::OutOfRange { what: "query count", detail: format!("{} > 64", queries.len()) });
    }
    if blocks.n() != masks.n() {
        return Err(Error::DimensionMismatch { expected: masks.n(), got: blocks.n() });
    }
    if let Some((s, _)) = queries.iter().find(|(s, _)| s.dim() != masks.dim()) {
        return Err(Error::DimensionMismatch { expected: masks.dim(), got: s.dim() });
    }
    let all = if queries.len() == 64 { u64::MAX } else { (1u64 << queries.len()) - 1 };
    Ok((0..blocks.k_n())
        .into_par_iter()
        .map(|b| {
            let mut seen = 0u64;
            for i in blocks.block(b) {
                for (q, (set, kind)) in queries.iter().enumerate() {
                    if seen >> q & 1 == 0 && masks.hit(i, set, *kind) {
                        seen |= 1 << q;
                    }
                }
                if seen == all {
                    break;
                }
            }
            seen
        })
        .collect())
}

/// Number of blocks holding at least one event, the `k_n P̂(N_{r_n} > 0)`
/// estimate.
pub fn nonzero_block_fraction(counts: &BlockCounts) -> f64 {
    counts.per_block.iter().filter(|&&c| c > 0).count() as f64
}

/// Events per nonzero block.
pub fn mean_cluster_size(counts: &BlockCounts) -> Result<f64> {
    let nonzero = nonzero_block_fraction(counts);
    if nonzero == 0.0 {
        return Err(Error::Undefined(format!(
            "no {} events for {} in any block",
            counts.kind.name(),
            counts.set
        )));
    }
    Ok(counts.total as f64 / nonzero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{MarginTag, TauVector};
    use proptest::prelude::*;

    fn hand_series() -> SeriesMatrix {
        SeriesMatrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 3.0], vec![3.0, 3.0]], MarginTag::Unknown).unwrap()
    }

    fn totals(series: &SeriesMatrix, u: Vec<f64>) -> [u64; 3] {
        let levels = LevelVector::explicit(u).unwrap();
        let set = IndexSet::full(2).unwrap();
        let blocks = BlockScheme::new(series.n(), 1).unwrap();
        EventKind::ALL.map(|k| count_blocks(series, &levels, &set, k, &blocks).unwrap().total)
    }

    #[test]
    fn hand_enumeration() {
        assert_eq!(totals(&hand_series(), vec![2.0, 2.0]), [3, 1, 1]);
        assert_eq!(totals(&hand_series(), vec![2.0, 4.0]), [2, 0, 0]);
    }

    #[test]
    fn ties_are_not_exceedances() {
        assert_eq!(totals(&hand_series(), vec![3.0, 1.0]), [2, 0, 0]);
        assert_eq!(totals(&hand_series(), vec![3.0, 3.0]), [0, 0, 0]);
    }

    #[test]
    fn nonzero_and_cluster_size() {
        let c = BlockCounts {
            kind: EventKind::Union,
            set: IndexSet::full(1).unwrap(),
            per_block: vec![0, 2, 0, 1],
            total: 3,
        };
        assert_eq!(nonzero_block_fraction(&c), 2.0);
        assert_eq!(mean_cluster_size(&c).unwrap(), 1.5);
        let zero = BlockCounts { per_block: vec![0; 4], total: 0, ..c };
        assert_eq!(nonzero_block_fraction(&zero), 0.0);
        assert!(matches!(mean_cluster_size(&zero), Err(Error::Undefined(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let levels = LevelVector::explicit(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(RowMasks::new(&hand_series(), &levels).is_err());
    }

    #[test]
    fn rate_levels_use_smallest_rate_for_common_level() {
        let levels = LevelVector::analytic(100, &TauVector::new(vec![2.0, 1.0]).unwrap(), &[1.0, 1.0]).unwrap();
        let rows = vec![vec![60.0, 60.0], vec![120.0, 120.0], vec![120.0, 60.0]];
        let s = SeriesMatrix::from_rows(&rows, MarginTag::UnitFrechet).unwrap();
        let set = IndexSet::full(2).unwrap();
        let blocks = BlockScheme::new(3, 3).unwrap();
        let star = count_blocks(&s, &levels, &set, EventKind::Star, &blocks).unwrap();
        let star2 = count_blocks(&s, &levels, &set, EventKind::Star2, &blocks).unwrap();
        assert_eq!(star.per_block, vec![0, 1, 0]);
        assert_eq!(star2.per_block, vec![0, 1, 0]);
    }

    fn rows_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize)> {
        (1usize..5, 1usize..40).prop_flat_map(|(d, n)| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..10.0, d), n),
                prop::collection::vec(0.1f64..5.0, d),
                1usize..=n,
            )
        })
    }

    proptest! {
        #[test]
        fn counts_are_ordered_per_block((rows, tau, k) in rows_strategy()) {
            let d = tau.len();
            let s = SeriesMatrix::from_rows(&rows, MarginTag::Unknown).unwrap();
            let levels = LevelVector::analytic(10, &TauVector::new(tau.clone()).unwrap(), &vec![1.0; d]).unwrap();
            let masks = RowMasks::new(&s, &levels).unwrap();
            let blocks = BlockScheme::new(s.n(), k).unwrap();
            for set in IndexSet::all_nonempty(d).unwrap() {
                let [u, st, st2] = EventKind::ALL.map(|kind| count_blocks_masked(&masks, &set, kind, &blocks).unwrap());
                for b in 0..k {
                    prop_assert!(st2.per_block[b] <= st.per_block[b]);
                    prop_assert!(st.per_block[b] <= u.per_block[b]);
                }
                if set.len() == 1 {
                    prop_assert_eq!(&u.per_block, &st.per_block);
                    prop_assert_eq!(&st.per_block, &st2.per_block);
                }
                prop_assert_eq!(u.total, u.per_block.iter().sum::<u64>());
                if let Ok(m) = mean_cluster_size(&u) {
                    prop_assert!(m >= 1.0);
                }
            }
        }

        #[test]
        fn equal_rates_make_star_and_star2_coincide((rows, _tau, k) in rows_strategy(), t in 0.1f64..5.0) {
            let d = rows[0].len();
            let s = SeriesMatrix::from_rows(&rows, MarginTag::Unknown).unwrap();
            let levels = LevelVector::analytic(10, &TauVector::new(vec![t; d]).unwrap(), &vec![1.0; d]).unwrap();
            let masks = RowMasks::new(&s, &levels).unwrap();
            let blocks = BlockScheme::new(s.n(), k).unwrap();
            for set in IndexSet::all_nonempty(d).unwrap() {
                let a = count_blocks_masked(&masks, &set, EventKind::Star, &blocks).unwrap();
                let b = count_blocks_masked(&masks, &set, EventKind::Star2, &blocks).unwrap();
                prop_assert_eq!(a.per_block, b.per_block);
            }
        }
    }
}
