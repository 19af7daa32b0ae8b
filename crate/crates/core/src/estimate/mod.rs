//! Monte-Carlo estimators of the extremal indices, their rates, and tail
//! dependence measures.

pub mod mei;
pub mod tail;

pub use mei::{
    default_level_scale, estimate_gamma, estimate_mei, estimate_mei_pooled, estimate_theta,
    estimate_theta_star2_invariance, Estimate, EstimationSettings, InvarianceTable, MeiBlocks, MeiReport, Prepared,
    ThetaEstimate,
};
pub use tail::{
    default_eta_k, empirical_copula_diag, estimate_chi, estimate_chibar, estimate_eta, estimate_madogram,
    extremal_coeff_from_madogram, tail_report, TailReport, TailSettings, DEFAULT_U_GRID,
};
