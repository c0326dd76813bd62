//! Discrepancy minimization with Adam in unconstrained coordinates.

use serde::{Deserialize, Serialize};

use crate::analytic::MomentSet;
use crate::error::{Error, Result};
use crate::model::{pack, Hyperparameters, Parameterization, UnconstrainedVector};
use crate::rng::RngHandle;

use super::dual::Dual;
use super::estimator::{estimate_prior_moments_with, EstimateOptions, PriorMoments, SampleBudget};
use super::layered::LayeredModel;

const BOUNDARY_GRAD_NORM: f64 = 1e-4;
const BOUNDARY_PATIENCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub mean: f64,
    pub variance: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { mean: 1.0, variance: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Divide each residual by max(1, |target|) before squaring.
    pub relative: bool,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 5000,
            tolerance: 1e-3,
            relative: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerStatistic {
    Mean,
    LogMean,
    Variance,
    LogVariance,
}

/// Subtracts α·T̂′ from the discrepancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub statistic: RegularizerStatistic,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchProblem {
    pub model: LayeredModel,
    pub init: Hyperparameters,
    pub parameterization: Parameterization,
    pub targets: MomentSet,
    pub weights: Weights,
    pub budget: SampleBudget,
    pub optimizer: AdamConfig,
    pub regularizer: Option<Regularizer>,
}

impl MatchProblem {
    /// Standard layered model for `init`, default weights and optimizer,
    /// budget S_Z × S_y = 10³ × 10.
    pub fn new(init: Hyperparameters, parameterization: Parameterization, targets: MomentSet) -> Result<Self> {
        let model = LayeredModel::for_hyper(&init, parameterization)?;
        let budget = SampleBudget::split(&model, 1000, 10);
        Ok(MatchProblem {
            model,
            init,
            parameterization,
            targets,
            weights: Weights::default(),
            budget,
            optimizer: AdamConfig::default(),
            regularizer: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.mean.is_none() && self.targets.variance.is_none() {
            return Err(Error::MissingTarget("mean or variance"));
        }
        if self.targets.rho1.is_some() || self.targets.rho2.is_some() {
            return Err(Error::Model("correlation targets are only supported by the closed-form solvers".into()));
        }
        let w = self.weights;
        if !(w.mean.is_finite() && w.variance.is_finite() && w.mean >= 0.0 && w.variance >= 0.0) {
            return Err(Error::Model("weights must be finite and non-negative".into()));
        }
        if let Some(r) = self.regularizer {
            if !(r.alpha >= 0.0 && r.alpha.is_finite()) {
                return Err(Error::domain("alpha", r.alpha));
            }
        }
        let o = &self.optimizer;
        if !(o.step_size > 0.0) || !(o.tolerance >= 0.0) {
            return Err(Error::Model("step size must be positive and tolerance non-negative".into()));
        }
        self.budget.validate(&self.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    ConvergedToTarget,
    BoundarySuspected,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub discrepancy: f64,
    pub e_hat: f64,
    pub var_hat: f64,
    pub grad_norm: f64,
    /// Hyperparameter values (constrained), in packing order.
    pub hyper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub fitted: Hyperparameters,
    pub names: Vec<String>,
    pub discrepancy: f64,
    pub iterations: usize,
    pub feasibility: Feasibility,
    pub trace: Vec<TraceRecord>,
}

/// Discrepancy as a dual number over the hyperparameters.
pub(crate) fn discrepancy(est: &PriorMoments, targets: &MomentSet, weights: &Weights, relative: bool, reg: Option<&Regularizer>) -> Dual {
    let scale = |t: f64| if relative { t.abs().max(1.0) } else { 1.0 };
    let mut d = Dual::ZERO;
    if let Some(t) = targets.mean {
        let r = (Dual::constant(t) - est.e1).scale(1.0 / scale(t));
        d += r.square().scale(weights.mean);
    }
    let var = est.variance_dual();
    if let Some(t) = targets.variance {
        let r = (Dual::constant(t) - var).scale(1.0 / scale(t));
        d += r.square().scale(weights.variance);
    }
    if let Some(reg) = reg {
        let stat = match reg.statistic {
            RegularizerStatistic::Mean => est.e1,
            RegularizerStatistic::LogMean => est.e1.ln(),
            RegularizerStatistic::Variance => var,
            RegularizerStatistic::LogVariance => var.ln(),
        };
        d = d - stat.scale(reg.alpha);
    }
    d
}

/// Minimize the discrepancy with Adam, drawing fresh noise every
/// iteration from a stream derived from the seed and iteration index.
pub fn match_prior(problem: &MatchProblem) -> Result<MatchResult> {
    problem.validate()?;
    let o = problem.optimizer;
    let mut lambda = pack(&problem.init, problem.parameterization)?;
    let n = lambda.len();
    let root = RngHandle::new(o.seed);
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut quiet = 0;
    let mut feasibility = Feasibility::MaxIterations;
    let mut last = f64::NAN;

    for t in 0..o.max_iterations {
        let est = match estimate_prior_moments_with(&problem.model, &lambda, &problem.budget, &root.derive(t as u64), EstimateOptions::default()) {
            Ok(e) => e,
            Err(Error::Gradient { .. } | Error::LayerGradient { .. }) if !trace.is_empty() => {
                return Err(Error::Diverged { iteration: t, trace });
            }
            Err(e) => return Err(e),
        };
        let d = discrepancy(&est, &problem.targets, &problem.weights, o.relative, problem.regularizer.as_ref());
        let grad: Vec<f64> = (0..n).map(|i| d.d[i] * lambda.transforms[i].jacobian(lambda.values[i])).collect();
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !d.v.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged { iteration: t, trace });
        }
        trace.push(TraceRecord {
            iteration: t,
            discrepancy: d.v,
            e_hat: est.e1.v,
            var_hat: est.variance(),
            grad_norm,
            hyper: lambda.constrained(),
        });
        last = d.v;
        if d.v < o.tolerance {
            feasibility = Feasibility::ConvergedToTarget;
            break;
        }
        let step = t as i32 + 1;
        let (c1, c2) = (1.0 - o.beta1.powi(step), 1.0 - o.beta2.powi(step));
        for i in 0..n {
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
        }
        // boundary test on the smoothed (first-moment) gradient
        let smoothed = m.iter().map(|x| (x / c1).powi(2)).sum::<f64>().sqrt();
        quiet = if smoothed < BOUNDARY_GRAD_NORM { quiet + 1 } else { 0 };
        if quiet >= BOUNDARY_PATIENCE {
            feasibility = Feasibility::BoundarySuspected;
            break;
        }
        let mut next = lambda.values.clone();
        for i in 0..n {
            next[i] -= o.step_size * (m[i] / c1) / ((v[i] / c2).sqrt() + o.epsilon);
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: t, trace });
        }
        lambda = lambda.with_values(next);
    }

    let fitted = lambda.unpack(&problem.init)?;
    Ok(MatchResult {
        fitted,
        names: lambda.names.clone(),
        discrepancy: last,
        iterations: trace.len(),
        feasibility,
        trace,
    })
}

/// One grid point of a discrepancy surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub coords: Vec<f64>,
    pub discrepancy: f64,
    pub e_hat: f64,
    pub var_hat: f64,
}

/// Discrepancy over a grid of values for one or two named hyperparameters,
/// the rest held at `problem.init`. Every point uses the same noise stream.
pub fn surface(problem: &MatchProblem, axes: &[(String, Vec<f64>)]) -> Result<Vec<SurfacePoint>> {
    problem.validate()?;
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::Model("surface takes one or two axes".into()));
    }
    let base = pack(&problem.init, problem.parameterization)?;
    let idx: Vec<usize> = axes
        .iter()
        .map(|(name, _)| base.index_of(name).ok_or_else(|| Error::Model(format!("unknown hyperparameter {name}"))))
        .collect::<Result<_>>()?;
    let mut grid: Vec<Vec<f64>> = vec![vec![]];
    for (_, values) in axes {
        grid = grid.into_iter().flat_map(|g| values.iter().map(move |v| [g.clone(), vec![*v]].concat())).collect();
    }
    let rng = RngHandle::new(problem.optimizer.seed);
    let options = EstimateOptions { value_only: true, common_random_numbers: false };
    grid.into_iter()
        .map(|coords| {
            let mut values = base.values.clone();
            for (&i, &x) in idx.iter().zip(&coords) {
                if !(x > 0.0) {
                    return Err(Error::domain(base.names[i].clone(), x));
                }
                values[i] = base.transforms[i].inverse(x);
            }
            let lambda: UnconstrainedVector = base.with_values(values);
            let est = estimate_prior_moments_with(&problem.model, &lambda, &problem.budget, &rng, options)?;
            let d = discrepancy(&est, &problem.targets, &problem.weights, problem.optimizer.relative, problem.regularizer.as_ref());
            Ok(SurfacePoint { coords, discrepancy: d.v, e_hat: est.e1.v, var_hat: est.variance() })
        })
        .collect()
}
