//! Stochastic prior predictive matching over layered generative models.

pub mod dual;
mod estimator;
mod gradcheck;
mod layered;
mod optimizer;
mod reparam;

pub use estimator::{estimate_prior_moments, estimate_prior_moments_with, EstimateOptions, MomentGrad, PriorMoments, SampleBudget};
pub use gradcheck::{gradient_check, GradientEntry, GradientReport};
pub use layered::{Expr, Family, LayeredModel, Node, OutputMode, OutputNode};
pub use optimizer::{
    match_prior, surface, AdamConfig, Feasibility, MatchProblem, MatchResult, Regularizer, RegularizerStatistic, SurfacePoint,
    TraceRecord, Weights,
};
pub use reparam::{gamma_partials, output_conditional_moment, reparam_gamma, reparam_normal, sampled_discrete_expectation, Statistic};
