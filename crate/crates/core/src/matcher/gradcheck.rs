use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::UnconstrainedVector;
use crate::rng::RngHandle;

use super::estimator::{estimate_prior_moments_with, EstimateOptions, SampleBudget};
use super::layered::LayeredModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEntry {
    pub name: String,
    /// "mean" or "second_moment".
    pub statistic: String,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub step: f64,
    pub entries: Vec<GradientEntry>,
    pub max_rel_error: f64,
}

/// Compare the estimator's partials with central differences of the
/// estimate itself, all runs sharing the same common random numbers.
///
/// Each hyperparameter x is perturbed to x·exp(±h); the analytic partial
/// is scaled by x to match.
pub fn gradient_check(
    model: &LayeredModel,
    lambda: &UnconstrainedVector,
    budget: &SampleBudget,
    h: f64,
    rng: &RngHandle,
) -> Result<GradientReport> {
    if !(h > 0.0) {
        return Err(Error::domain("h", h));
    }
    let crn = EstimateOptions { value_only: false, common_random_numbers: true };
    let values_only = EstimateOptions { value_only: true, common_random_numbers: true };
    let base = estimate_prior_moments_with(model, lambda, budget, rng, crn)?;
    let mut entries = Vec::new();
    for (i, name) in lambda.names.iter().enumerate() {
        let at = |delta: f64| {
            let mut v = lambda.values.clone();
            v[i] += delta;
            estimate_prior_moments_with(model, &lambda.with_values(v), budget, rng, values_only)
        };
        let (up, down) = (at(h)?, at(-h)?);
        let jac = lambda.transforms[i].jacobian(lambda.values[i]);
        for (stat, an, fu, fd) in [
            ("mean", base.mean.partials[name], up.mean.value, down.mean.value),
            ("second_moment", base.second_moment.partials[name], up.second_moment.value, down.second_moment.value),
        ] {
            let analytic = an * jac;
            let finite_difference = (fu - fd) / (2.0 * h);
            let scale = analytic.abs().max(finite_difference.abs());
            let rel_error = if scale == 0.0 { 0.0 } else { (analytic - finite_difference).abs() / scale };
            entries.push(GradientEntry { name: name.clone(), statistic: stat.into(), analytic, finite_difference, rel_error });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradientReport { step: h, entries, max_rel_error })
}
