//! Multivariate extremal index toolkit: M4 closed forms and an exact finite-n
//! oracle, simulation of M4 and Gaussian-copula series, block estimators of
//! `θ`, `θ*`, `θ**` and their rates, bounds on `θ(τ)`, the point-process
//! decompositions, and tail dependence estimators.

pub mod bootstrap;
pub mod bounds;
pub mod counts;
pub mod decomp;
pub mod domain;
pub mod error;
pub mod estimate;
pub mod simulate;
pub mod theory;

pub use counts::{count_blocks, count_blocks_masked, mean_cluster_size, nonzero_block_fraction, BlockCounts, EventKind, RowMasks};
pub use domain::{
    make_blocks, make_levels, BlockScheme, Coefficient, GaussFrechetSpec, IndexSet, LevelPolicy, LevelVector,
    M4Spec, MarginTag, SeriesMatrix, TauVector, MAX_DIM,
};
pub use error::{Error, Result};
pub use simulate::{block_maxima, simulate_gauss_frechet, simulate_iid_frechet, simulate_m4, Seed};
