//! Reparameterized draws and conditional-moment primitives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::poisson_draw;
use crate::special::{ln_poisson_pmf, poisson_quantile, standard_gamma_quantile, standard_gamma_shape_derivative, standard_normal_quantile};

use super::dual::Dual;
use super::layered::Family;

/// The statistic g(Y) whose expectation is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Y,
    YSquared,
}

impl Statistic {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Statistic::Y => y,
            Statistic::YSquared => y * y,
        }
    }
}

/// Source of base noise.
///
/// `Fast` uses the library samplers. `Common` draws every variate by
/// inversion of a single uniform, so the noise consumed per draw does not
/// depend on the hyperparameters and perturbed runs see the same noise.
pub(crate) struct Noise {
    pub rng: ChaCha8Rng,
    pub common: bool,
}

impl Noise {
    /// Uniform on the open interval (0, 1).
    fn uniform(&mut self) -> f64 {
        ((self.rng.gen::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_gamma(&mut self, shape: f64) -> f64 {
        if self.common {
            let u = self.uniform();
            standard_gamma_quantile(shape, u)
        } else {
            match Gamma::new(shape, 1.0) {
                Ok(g) => g.sample(&mut self.rng),
                Err(_) => f64::NAN,
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if self.common {
            let u = self.uniform();
            standard_normal_quantile(u)
        } else {
            StandardNormal.sample(&mut self.rng)
        }
    }

    pub fn poisson(&mut self, rate: f64) -> u64 {
        if self.common {
            let u = self.uniform();
            poisson_quantile(rate, u)
        } else {
            poisson_draw(&mut self.rng, rate)
        }
    }
}

/// z = x / rate for a standard draw x, with partials through
/// dz/dshape = (dx/dshape)/rate and dz/drate = −z/rate.
pub(crate) fn gamma_from_standard(shape: &Dual, rate: &Dual, x: f64, gradients: bool) -> Result<Dual> {
    let z = x / rate.v;
    if !gradients {
        return Ok(Dual::constant(z));
    }
    if x <= 0.0 {
        return Ok(Dual::constant(z));
    }
    let dx = standard_gamma_shape_derivative(shape.v, x);
    if !dx.is_finite() {
        return Err(Error::Gradient { shape: shape.v, value: z, reason: "non-finite shape derivative".into() });
    }
    Ok(Dual::combine(z, dx / rate.v, shape, -z / rate.v, rate))
}

/// Draw Gamma(shape, rate) with partials (d/dshape, d/drate).
pub fn reparam_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<(f64, f64, f64)> {
    if !(shape > 0.0) {
        return Err(Error::domain("shape", shape));
    }
    if !(rate > 0.0) {
        return Err(Error::domain("rate", rate));
    }
    let x = Gamma::new(shape, 1.0).map_err(|e| Error::Model(e.to_string()))?.sample(rng);
    gamma_partials(shape, rate, x)
}

/// Partials of the draw z = x/rate, where x is a standard Gamma(shape)
/// variate.
pub fn gamma_partials(shape: f64, rate: f64, x: f64) -> Result<(f64, f64, f64)> {
    let z = gamma_from_standard(&Dual::seed(shape, 0, 1.0), &Dual::seed(rate, 1, 1.0), x, true)?;
    Ok((z.v, z.d[0], z.d[1]))
}

/// mu + sigma·ε with partials (1, ε).
pub fn reparam_normal<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64) -> Result<(f64, f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::domain("sigma", sigma));
    }
    let eps: f64 = StandardNormal.sample(rng);
    Ok((mu + sigma * eps, 1.0, eps))
}

/// E[g(Y) | params] in closed form for the output families.
pub(crate) fn conditional_moment_dual(family: Family, params: &[Dual], g: Statistic) -> Result<Dual> {
    match family {
        Family::Poisson => {
            let r = params[0];
            if r.v < 0.0 {
                return Err(Error::domain("rate", r.v));
            }
            Ok(match g {
                Statistic::Y => r,
                Statistic::YSquared => r + r.square(),
            })
        }
        Family::Normal => {
            let (m, s) = (params[0], params[1]);
            Ok(match g {
                Statistic::Y => m,
                Statistic::YSquared => m.square() + s.square(),
            })
        }
        Family::Gamma => {
            let (a, b) = (params[0], params[1]);
            if a.v < 0.0 || !(b.v > 0.0) {
                return Err(Error::domain("shape", a.v));
            }
            Ok(match g {
                Statistic::Y => a / b,
                Statistic::YSquared => a * (a + Dual::constant(1.0)) / b.square(),
            })
        }
    }
}

/// E[g(Y) | params] and its partials with respect to each parameter.
pub fn output_conditional_moment(family: Family, params: &[f64], g: Statistic) -> Result<(f64, Vec<f64>)> {
    if params.len() != family.arity() {
        return Err(Error::Model(format!("{family:?} takes {} parameters", family.arity())));
    }
    let duals: Vec<Dual> = params.iter().enumerate().map(|(i, &p)| Dual::seed(p, i, 1.0)).collect();
    let m = conditional_moment_dual(family, &duals, g)?;
    Ok((m.v, m.d[..params.len()].to_vec()))
}

/// Distinct support points of `c` Poisson draws with self-normalized
/// weights p(y|rate)/Σ p(y′|rate); weight partials flow through the rate.
pub(crate) fn poisson_support(noise: &mut Noise, rate: &Dual, c: usize) -> Result<Vec<(u64, Dual)>> {
    if rate.v < 0.0 || !rate.v.is_finite() {
        return Err(Error::domain("rate", rate.v));
    }
    let mut ys: Vec<u64> = (0..c).map(|_| noise.poisson(rate.v)).collect();
    ys.sort_unstable();
    ys.dedup();
    if rate.v == 0.0 {
        return Ok(vec![(0, Dual::constant(1.0))]);
    }
    let logs: Vec<f64> = ys.iter().map(|&y| ln_poisson_pmf(y, rate.v)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Estimator(format!("all sampled probability mass underflowed at rate {}", rate.v)));
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    // d ln p(y)/d rate = y/rate − 1
    let score: Vec<f64> = ys.iter().map(|&y| y as f64 / rate.v - 1.0).collect();
    let mean_score: f64 = w.iter().zip(&score).map(|(w, s)| w * s).sum::<f64>() / total;
    Ok(ys
        .into_iter()
        .zip(w.iter().zip(&score))
        .map(|(y, (wi, si))| {
            let p = wi / total;
            (y, rate.chain(p, p * (si - mean_score)))
        })
        .collect())
}

pub(crate) fn sampled_poisson_moment(noise: &mut Noise, rate: &Dual, g: Statistic, c: usize) -> Result<Dual> {
    let mut acc = Dual::ZERO;
    for (y, w) in poisson_support(noise, rate, c)? {
        acc += w.scale(g.apply(y as f64));
    }
    Ok(acc)
}

/// Self-normalized estimate Σ g(y)p(y|rate) / Σ p(y|rate) over the distinct
/// values among `c` Poisson(rate) draws, with its partial in the rate.
pub fn sampled_discrete_expectation(rng: &mut ChaCha8Rng, rate: f64, g: Statistic, c: usize) -> Result<(f64, f64)> {
    if c == 0 {
        return Err(Error::Estimator("sample count must be at least 1".into()));
    }
    let mut noise = Noise { rng: rng.clone(), common: false };
    let m = sampled_poisson_moment(&mut noise, &Dual::seed(rate, 0, 1.0), g, c)?;
    *rng = noise.rng;
    Ok((m.v, m.d[0]))
}
