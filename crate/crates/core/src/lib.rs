//! Prior predictive matching for Poisson-family matrix factorization.
//!
//! Closed-form moments and inverse solvers for PMF and compound PMF live in
//! [`analytic`]; [`matcher`] fits hyperparameters of arbitrary layered
//! models (including hierarchical PMF) by stochastic moment matching.

pub mod analytic;
pub mod error;
pub mod matcher;
pub mod model;
pub mod moments;
pub mod rng;
pub mod sampler;
pub mod special;

pub use analytic::{
    cpmf_forward_moments, cpmf_solve, pmf_covariance, pmf_forward_moments, pmf_solve, rate_constraint, ConditionalLaw, EdFamily,
    InverseSolution, MomentSet,
};
pub use error::{Error, Infeasibility, Result, Violation};
pub use matcher::{
    estimate_prior_moments, gradient_check, match_prior, LayeredModel, MatchProblem, MatchResult, SampleBudget,
};
pub use model::{
    gamma_from_meanstd, meanstd_from_gamma, pack, CpmfHyper, GammaParams, HpfHyper, HyperFile, Hyperparameters, MeanStdParams,
    ModelKind, Parameterization, PmfHyper, Prior, UnconstrainedVector,
};
pub use moments::{estimate_k, estimate_moments, MomentEstimate};
pub use rng::RngHandle;
pub use sampler::{sample_gamma, simulate_cpmf, simulate_hpf, simulate_pmf, DataMatrix};
