//! Closed-form prior predictive moments of PMF and CPMF, and the inverse
//! maps from target moments back to the latent dimension and prior
//! coefficients of variation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Infeasibility, Result, Violation};
use crate::model::{CpmfHyper, PmfHyper};
use crate::sampler;

/// Mean, variance and the two off-diagonal correlations of Y_ij.
///
/// `rho1` is the correlation of two entries sharing a row, `rho2` of two
/// entries sharing a column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho2: Option<f64>,
}

impl MomentSet {
    pub fn full(mean: f64, variance: f64, rho1: f64, rho2: f64) -> Self {
        MomentSet { mean: Some(mean), variance: Some(variance), rho1: Some(rho1), rho2: Some(rho2) }
    }

    pub fn mean_variance(mean: f64, variance: f64) -> Self {
        MomentSet { mean: Some(mean), variance: Some(variance), ..Default::default() }
    }

    /// τ = 1 − (ρ₁ + ρ₂), when both correlations are present.
    pub fn tau(&self) -> Option<f64> {
        Some(1.0 - (self.rho1? + self.rho2?))
    }

    fn require(&self) -> Result<(f64, f64, f64, f64)> {
        Ok((
            self.mean.ok_or(Error::MissingTarget("mean"))?,
            self.variance.ok_or(Error::MissingTarget("variance"))?,
            self.rho1.ok_or(Error::MissingTarget("rho1"))?,
            self.rho2.ok_or(Error::MissingTarget("rho2"))?,
        ))
    }
}

/// How an exponential-dispersion observation is drawn given its count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalLaw {
    /// Y | N ~ Normal(κNψ′, κNψ″).
    Normal,
    /// Y | N ~ Gamma with mean κNψ′ and variance κNψ″.
    Gamma,
    /// Y = κNψ′ exactly; requires ψ″ = 0.
    Degenerate,
}

/// Exponential-dispersion observation model, stored through the evaluated
/// cumulant derivatives ψ′(w) and ψ″(w).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdFamily {
    pub name: String,
    pub kappa: f64,
    pub psi_prime: f64,
    pub psi_double_prime: f64,
    pub law: ConditionalLaw,
}

impl EdFamily {
    pub fn new(name: impl Into<String>, kappa: f64, psi_prime: f64, psi_double_prime: f64, law: ConditionalLaw) -> Result<Self> {
        let ed = EdFamily { name: name.into(), kappa, psi_prime, psi_double_prime, law };
        ed.validate()?;
        Ok(ed)
    }

    /// Y = sum of N independent Normal(mean, std²) summands.
    pub fn poisson_normal(mean: f64, std: f64) -> Result<Self> {
        Self::new(format!("poisson_normal({mean},{std})"), 1.0, mean, std * std, ConditionalLaw::Normal)
    }

    /// Y = sum of N independent Gamma(shape, rate) summands.
    pub fn poisson_gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::new(format!("poisson_gamma({shape},{rate})"), 1.0, shape / rate, shape / (rate * rate), ConditionalLaw::Gamma)
    }

    /// Y = value · N.
    pub fn degenerate(value: f64) -> Result<Self> {
        Self::new(format!("degenerate({value})"), 1.0, value, 0.0, ConditionalLaw::Degenerate)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(Error::domain(field, v)) };
        positive("kappa", self.kappa)?;
        positive("psi_prime", self.psi_prime)?;
        match self.law {
            ConditionalLaw::Degenerate if self.psi_double_prime != 0.0 => {
                Err(Error::Model("degenerate ED law requires psi_double_prime = 0".into()))
            }
            ConditionalLaw::Degenerate => Ok(()),
            _ => positive("psi_double_prime", self.psi_double_prime),
        }
    }

    /// κψ′(w): conditional mean per unit count.
    pub fn mean_factor(&self) -> f64 {
        self.kappa * self.psi_prime
    }

    /// κψ″(w): conditional variance per unit count.
    pub fn variance_factor(&self) -> f64 {
        self.kappa * self.psi_double_prime
    }

    /// ψ″(w)/ψ′(w).
    pub fn dispersion_ratio(&self) -> f64 {
        self.psi_double_prime / self.psi_prime
    }

    /// Draw Y given the latent count. A zero count is an empty sum.
    pub fn sample_conditional<R: Rng + ?Sized>(&self, rng: &mut R, count: u64) -> f64 {
        if count == 0 {
            return 0.0;
        }
        let n = count as f64;
        let mean = n * self.mean_factor();
        let var = n * self.variance_factor();
        match self.law {
            ConditionalLaw::Degenerate => mean,
            ConditionalLaw::Normal => mean + var.sqrt() * sampler::standard_normal(rng),
            ConditionalLaw::Gamma => {
                let rate = mean / var;
                sampler::gamma_draw(rng, mean * rate, rate)
            }
        }
    }
}

/// Latent moments in mean/std form; std may be zero here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentMoments {
    pub k: f64,
    pub mu_theta: f64,
    pub sigma_theta: f64,
    pub mu_beta: f64,
    pub sigma_beta: f64,
}

impl From<&PmfHyper> for LatentMoments {
    fn from(h: &PmfHyper) -> Self {
        LatentMoments {
            k: f64::from(h.k),
            mu_theta: h.row.mean(),
            sigma_theta: h.row.std(),
            mu_beta: h.col.mean(),
            sigma_beta: h.col.std(),
        }
    }
}

impl LatentMoments {
    /// (μθμβ, (μβσθ)², (μθσβ)², (σθσβ)²)
    fn terms(&self) -> (f64, f64, f64, f64) {
        (
            self.mu_theta * self.mu_beta,
            (self.mu_beta * self.sigma_theta).powi(2),
            (self.mu_theta * self.sigma_beta).powi(2),
            (self.sigma_theta * self.sigma_beta).powi(2),
        )
    }

    pub fn pmf_moments(&self) -> MomentSet {
        self.compound_moments(1.0, 0.0)
    }

    /// Moments when the Poisson count is pushed through an observation
    /// with per-count mean `f` and per-count variance `g`.
    pub fn compound_moments(&self, f: f64, g: f64) -> MomentSet {
        let (m, rt, ct, ss) = self.terms();
        let k = self.k;
        let mean = f * k * m;
        let variance = g * k * m + f * f * k * (m + rt + ct + ss);
        let (rho1, rho2) = if variance > 0.0 {
            (k * f * f * rt / variance, k * f * f * ct / variance)
        } else {
            (0.0, 0.0)
        };
        MomentSet::full(mean, variance, rho1, rho2)
    }
}

pub fn pmf_forward_moments(h: &PmfHyper) -> MomentSet {
    LatentMoments::from(h).pmf_moments()
}

pub fn cpmf_forward_moments(h: &CpmfHyper) -> MomentSet {
    LatentMoments::from(&h.base).compound_moments(h.ed.mean_factor(), h.ed.variance_factor())
}

/// Cov[Y_ij, Y_tl] for the Kronecker cases i = t (`same_row`) and
/// j = l (`same_col`).
pub fn pmf_covariance(h: &PmfHyper, same_row: bool, same_col: bool) -> f64 {
    let (m, rt, ct, ss) = LatentMoments::from(h).terms();
    let delta = |b: bool| if b { 1.0 } else { 0.0 };
    let (dr, dc) = (delta(same_row), delta(same_col));
    f64::from(h.k) * (dr * rt + dc * ct + dr * dc * (m + ss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseSolution {
    pub k_real: f64,
    pub k: u32,
    pub cv_theta_sq: f64,
    pub cv_beta_sq: f64,
    pub sigma_product: f64,
    /// Gamma shapes (a, c) of the row and column priors.
    pub gamma_shapes: Option<(f64, f64)>,
    /// Admissible Gamma rates satisfy b·d = rate_constraint.
    pub rate_constraint: f64,
    /// κψ′(w) of the observation model; 1 for PMF.
    pub mean_factor: f64,
}

impl InverseSolution {
    /// Gamma-prior PMF hyperparameters on the admissible curve with row
    /// rate `b` (column rate d = r / b).
    pub fn pmf_with_row_rate(&self, b: f64) -> Result<PmfHyper> {
        let (a, c) = self.gamma_shapes.ok_or_else(|| Error::Model("solution has no Gamma shapes".into()))?;
        PmfHyper::from_shape_rate(self.k, a, b, c, self.rate_constraint / b)
    }

    /// The symmetric point b = d = √r.
    pub fn pmf_symmetric(&self) -> Result<PmfHyper> {
        self.pmf_with_row_rate(self.rate_constraint.sqrt())
    }
}

/// Round half up, floored at 1.
fn round_k(k_real: f64) -> u32 {
    let k = (k_real + 0.5).floor();
    if k.is_finite() && k >= 1.0 {
        k.min(f64::from(u32::MAX)) as u32
    } else {
        1
    }
}

/// `f` is κψ′ and `dispersion` is ψ″/ψ′; PMF is f = 1, dispersion = 0.
fn solve_general(targets: &MomentSet, f: f64, dispersion: f64) -> Result<InverseSolution> {
    let (mean, var, rho1, rho2) = targets.require()?;
    let tau = 1.0 - (rho1 + rho2);
    let c = f + dispersion;
    let numerator = tau * var - c * mean;

    let mut violations = Vec::new();
    let mut check = |ok: bool, inequality: String, slack: f64| {
        if !ok {
            violations.push(Violation { inequality, slack });
        }
    };
    check(mean > 0.0, "mean must be positive".into(), mean);
    let variance_rule = if f == 1.0 && dispersion == 0.0 {
        "variance must exceed mean".to_string()
    } else {
        format!("variance must exceed (kappa*psi' + psi''/psi')*mean = {c}*mean")
    };
    check(var > c * mean, variance_rule, var - c * mean);
    check(rho1 > 0.0, "rho1 must be positive".into(), rho1);
    check(rho2 > 0.0, "rho2 must be positive".into(), rho2);
    let numerator_rule = if c == 1.0 {
        "(1 - rho1 - rho2)*variance - mean must be positive".to_string()
    } else {
        format!("(1 - rho1 - rho2)*variance - {c}*mean must be positive")
    };
    check(numerator > 0.0, numerator_rule, numerator);
    if !violations.is_empty() {
        return Err(Error::Infeasible(Infeasibility { violations }));
    }

    let k_real = numerator / (rho1 * rho2) * (mean / var).powi(2);
    let cv_theta_sq = numerator / (rho2 * var);
    let cv_beta_sq = numerator / (rho1 * var);
    let sigma_product = var / (mean * f) * (rho1 * rho2).sqrt();
    let (a, c_shape) = (1.0 / cv_theta_sq, 1.0 / cv_beta_sq);
    let k = round_k(k_real);
    let mut sol = InverseSolution {
        k_real,
        k,
        cv_theta_sq,
        cv_beta_sq,
        sigma_product,
        gamma_shapes: Some((a, c_shape)),
        rate_constraint: 0.0,
        mean_factor: f,
    };
    sol.rate_constraint = rate_constraint(&sol, targets)?;
    Ok(sol)
}

pub fn pmf_solve(targets: &MomentSet) -> Result<InverseSolution> {
    solve_general(targets, 1.0, 0.0)
}

pub fn cpmf_solve(targets: &MomentSet, ed: &EdFamily) -> Result<InverseSolution> {
    ed.validate()?;
    solve_general(targets, ed.mean_factor(), ed.dispersion_ratio())
}

/// r = K·a·c·κψ′/E: every (b, d) with b·d = r reproduces the target mean.
pub fn rate_constraint(sol: &InverseSolution, targets: &MomentSet) -> Result<f64> {
    let mean = targets.mean.ok_or(Error::MissingTarget("mean"))?;
    let (a, c) = sol.gamma_shapes.ok_or_else(|| Error::Model("solution has no Gamma shapes".into()))?;
    Ok(f64::from(sol.k) * a * c * sol.mean_factor / mean)
}
