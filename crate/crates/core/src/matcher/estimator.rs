//! Nested Monte Carlo estimates of E[Y] and E[Y²] under a layered model,
//! with forward-mode partials in the bound hyperparameters.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::UnconstrainedVector;
use crate::rng::RngHandle;

use super::dual::Dual;
use super::layered::{BoundModel, CNode, Family, LayeredModel, OutputMode};
use super::reparam::{conditional_moment_dual, gamma_from_standard, poisson_support, Noise, Statistic};

/// Top-level draws per parallel work unit; each unit has its own stream.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBudget {
    /// Draws per continuous latent layer, outermost first.
    pub latent: Vec<usize>,
    /// Output draws per innermost latent draw (sampled output only).
    pub output: usize,
    /// Normalization set size for sampled discrete sums.
    pub discrete: usize,
}

impl SampleBudget {
    pub fn new(latent: Vec<usize>, output: usize, discrete: usize) -> Self {
        SampleBudget { latent, output, discrete }
    }

    /// `s_z` draws of the outermost latent layer, one draw of each deeper
    /// latent layer per outer draw, `s_y` output and discrete draws.
    pub fn split(model: &LayeredModel, s_z: usize, s_y: usize) -> Self {
        let mut latent = vec![1; model.continuous_layers()];
        if let Some(first) = latent.first_mut() {
            *first = s_z;
        }
        SampleBudget { latent, output: s_y, discrete: s_y }
    }

    pub fn validate(&self, model: &LayeredModel) -> Result<()> {
        if self.latent.len() != model.continuous_layers() {
            return Err(Error::Model(format!(
                "budget lists {} latent layers, model has {}",
                self.latent.len(),
                model.continuous_layers()
            )));
        }
        if self.latent.iter().any(|&s| s == 0) || self.output == 0 || self.discrete == 0 {
            return Err(Error::Model("all sample counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentGrad {
    pub value: f64,
    /// Partials with respect to each bound hyperparameter (constrained
    /// scale).
    pub partials: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EstimateOptions {
    /// Skip partials; only the values are meaningful.
    pub value_only: bool,
    /// Draw all noise by inversion of one uniform per variate.
    pub common_random_numbers: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorMoments {
    pub mean: MomentGrad,
    pub second_moment: MomentGrad,
    /// Standard errors over the outermost draws.
    pub mean_stderr: f64,
    pub second_moment_stderr: f64,
    pub(crate) e1: Dual,
    pub(crate) e2: Dual,
}

impl PriorMoments {
    /// V̂ = Ê[Y²] − Ê[Y]².
    pub fn variance(&self) -> f64 {
        self.e2.v - self.e1.v * self.e1.v
    }

    pub(crate) fn variance_dual(&self) -> Dual {
        self.e2 - self.e1.square()
    }
}

struct Walker<'a> {
    model: &'a BoundModel,
    budget: &'a SampleBudget,
    gradients: bool,
}

impl Walker<'_> {
    fn sample_node(&self, node: &CNode, env: &mut [Vec<Dual>], noise: &mut Noise) -> Result<()> {
        let hypers = &self.model.hypers;
        let static_params = node.params.iter().all(|p| p.is_static());
        let fixed: Vec<Dual> = if static_params { node.params.iter().map(|p| p.eval(hypers, env, 0)).collect() } else { Vec::new() };
        let mut values = std::mem::take(&mut env[node.id]);
        values.clear();
        for k in 0..node.width {
            let (p0, p1) = if static_params {
                (fixed[0], fixed.get(1).copied())
            } else {
                (node.params[0].eval(hypers, env, k), node.params.get(1).map(|p| p.eval(hypers, env, k)))
            };
            let v = match node.family {
                Family::Gamma => {
                    let rate = p1.expect("arity checked");
                    if !(p0.v > 0.0) || !(rate.v > 0.0) {
                        return Err(Error::Gradient { shape: p0.v, value: rate.v, reason: format!("invalid Gamma parameters in node {}", node.name) });
                    }
                    let x = noise.standard_gamma(p0.v);
                    gamma_from_standard(&p0, &rate, x, self.gradients)?
                }
                Family::Normal => {
                    let eps = noise.standard_normal();
                    p0 + p1.expect("arity checked").scale(eps)
                }
                Family::Poisson => Dual::constant(noise.poisson(p0.v) as f64),
            };
            if !v.is_finite() {
                return Err(Error::LayerGradient { layer: node.name.clone() });
            }
            values.push(v);
        }
        env[node.id] = values;
        Ok(())
    }

    fn output(&self, env: &[Vec<Dual>], noise: &mut Noise) -> Result<(Dual, Dual)> {
        let out = &self.model.output;
        let params: Vec<Dual> = out.params.iter().map(|p| p.eval(&self.model.hypers, env, 0)).collect();
        match (self.model.output_mode, out.family) {
            (OutputMode::Exact, f) => Ok((
                conditional_moment_dual(f, &params, Statistic::Y)?,
                conditional_moment_dual(f, &params, Statistic::YSquared)?,
            )),
            (OutputMode::Sampled, Family::Poisson) => {
                let support = poisson_support(noise, &params[0], self.budget.output)?;
                let (mut e1, mut e2) = (Dual::ZERO, Dual::ZERO);
                for (y, w) in support {
                    let y = y as f64;
                    e1 += w.scale(y);
                    e2 += w.scale(y * y);
                }
                Ok((e1, e2))
            }
            (OutputMode::Sampled, Family::Gamma) => {
                let (mut e1, mut e2) = (Dual::ZERO, Dual::ZERO);
                let s = self.budget.output;
                for _ in 0..s {
                    let x = noise.standard_gamma(params[0].v);
                    let z = gamma_from_standard(&params[0], &params[1], x, self.gradients)?;
                    e1 += z;
                    e2 += z.square();
                }
                Ok((e1.scale(1.0 / s as f64), e2.scale(1.0 / s as f64)))
            }
            (OutputMode::Sampled, Family::Normal) => {
                let (mut e1, mut e2) = (Dual::ZERO, Dual::ZERO);
                let s = self.budget.output;
                for _ in 0..s {
                    let z = params[0] + params[1].scale(noise.standard_normal());
                    e1 += z;
                    e2 += z.square();
                }
                Ok((e1.scale(1.0 / s as f64), e2.scale(1.0 / s as f64)))
            }
        }
    }

    /// One draw of layer `l` followed by the expectation over layers below.
    fn draw(&self, l: usize, env: &mut [Vec<Dual>], noise: &mut Noise) -> Result<(Dual, Dual)> {
        let layer = &self.model.layers[l];
        for node in &layer.nodes {
            self.sample_node(node, env, noise)?;
        }
        self.expect(l + 1, env, noise)
    }

    fn expect(&self, l: usize, env: &mut [Vec<Dual>], noise: &mut Noise) -> Result<(Dual, Dual)> {
        if l == self.model.layers.len() {
            return self.output(env, noise);
        }
        let layer = &self.model.layers[l];
        if layer.discrete {
            let node = &layer.nodes[0];
            let rate = node.params[0].eval(&self.model.hypers, env, 0);
            let support = poisson_support(noise, &rate, self.budget.discrete)?;
            let (mut e1, mut e2) = (Dual::ZERO, Dual::ZERO);
            for (y, w) in support {
                env[node.id] = vec![Dual::constant(y as f64)];
                let (a, b) = self.expect(l + 1, env, noise)?;
                e1 += w * a;
                e2 += w * b;
            }
            return Ok((e1, e2));
        }
        let s = self.budget.latent[layer.budget_slot];
        let (mut e1, mut e2) = (Dual::ZERO, Dual::ZERO);
        for _ in 0..s {
            let (a, b) = self.draw(l, env, noise)?;
            e1 += a;
            e2 += b;
        }
        Ok((e1.scale(1.0 / s as f64), e2.scale(1.0 / s as f64)))
    }
}

struct Partial {
    e1: Dual,
    e2: Dual,
    sq1: f64,
    sq2: f64,
}

/// Nested estimate of E[Y] and E[Y²] at `lambda`.
pub fn estimate_prior_moments(
    model: &LayeredModel,
    lambda: &UnconstrainedVector,
    budget: &SampleBudget,
    rng: &RngHandle,
) -> Result<PriorMoments> {
    estimate_prior_moments_with(model, lambda, budget, rng, EstimateOptions::default())
}

pub fn estimate_prior_moments_with(
    model: &LayeredModel,
    lambda: &UnconstrainedVector,
    budget: &SampleBudget,
    rng: &RngHandle,
    options: EstimateOptions,
) -> Result<PriorMoments> {
    budget.validate(model)?;
    let bound = model.bind(lambda)?;
    let walker = Walker { model: &bound, budget, gradients: !options.value_only };
    let noise_for = |h: RngHandle| Noise { rng: h.rng(), common: options.common_random_numbers };

    // The outermost continuous layer is split into chunks on derived
    // streams; chunk sums are combined in order.
    let (e1, e2, sd1, sd2) = match bound.layers.first() {
        Some(first) if !first.discrete => {
            let s = budget.latent[first.budget_slot];
            let chunks = s.div_ceil(CHUNK);
            let parts: Vec<Result<Partial>> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut noise = noise_for(rng.derive(c as u64));
                    let mut env = vec![Vec::new(); bound.n_nodes];
                    let mut p = Partial { e1: Dual::ZERO, e2: Dual::ZERO, sq1: 0.0, sq2: 0.0 };
                    for _ in (c * CHUNK)..((c + 1) * CHUNK).min(s) {
                        let (a, b) = walker.draw(0, &mut env, &mut noise)?;
                        p.e1 += a;
                        p.e2 += b;
                        p.sq1 += a.v * a.v;
                        p.sq2 += b.v * b.v;
                    }
                    Ok(p)
                })
                .collect();
            let (mut e1, mut e2, mut sq1, mut sq2) = (Dual::ZERO, Dual::ZERO, 0.0, 0.0);
            for p in parts {
                let p = p?;
                e1 += p.e1;
                e2 += p.e2;
                sq1 += p.sq1;
                sq2 += p.sq2;
            }
            let n = s as f64;
            let (e1, e2) = (e1.scale(1.0 / n), e2.scale(1.0 / n));
            let se = |sq: f64, m: f64| if s > 1 { ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt() } else { f64::NAN };
            (e1, e2, se(sq1, e1.v), se(sq2, e2.v))
        }
        _ => {
            let mut noise = noise_for(rng.derive(0));
            let mut env = vec![Vec::new(); bound.n_nodes];
            let (a, b) = walker.expect(0, &mut env, &mut noise)?;
            (a, b, f64::NAN, f64::NAN)
        }
    };
    if !e1.is_finite() || !e2.is_finite() {
        return Err(Error::LayerGradient { layer: bound.output.name.clone() });
    }
    let grad = |d: &Dual| MomentGrad {
        value: d.v,
        partials: bound.names.iter().enumerate().map(|(i, n)| (n.clone(), d.d[i])).collect(),
    };
    Ok(PriorMoments { mean: grad(&e1), second_moment: grad(&e2), mean_stderr: sd1, second_moment_stderr: sd2, e1, e2 })
}
