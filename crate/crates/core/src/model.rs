//! Hyperparameter containers and the unconstrained representation used by
//! the stochastic matcher.
//!
//! Positive hyperparameters are optimized as logs; `k` is an integer and is
//! never part of an [`UnconstrainedVector`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analytic::EdFamily;
use crate::error::{Error, Result};

fn check_positive(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(field, value))
    }
}

/// Gamma distribution in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let p = GammaParams { shape, rate };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("shape", self.shape)?;
        check_positive("rate", self.rate)
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Location/scale description of a positive prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStdParams {
    pub mean: f64,
    pub std: f64,
}

impl MeanStdParams {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        let p = MeanStdParams { mean, std };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("mean", self.mean)?;
        check_positive("std", self.std)
    }
}

/// shape = (mean/std)², rate = mean/std².
pub fn gamma_from_meanstd(p: MeanStdParams) -> Result<GammaParams> {
    p.validate()?;
    let ratio = p.mean / p.std;
    Ok(GammaParams { shape: ratio * ratio, rate: ratio / p.std })
}

pub fn meanstd_from_gamma(p: GammaParams) -> Result<MeanStdParams> {
    p.validate()?;
    Ok(MeanStdParams { mean: p.shape / p.rate, std: p.shape.sqrt() / p.rate })
}

/// A Gamma prior held in either coordinate system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    MeanStd(MeanStdParams),
    ShapeRate(GammaParams),
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::MeanStd(p) => p.validate(),
            Prior::ShapeRate(p) => p.validate(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Prior::MeanStd(p) => p.mean,
            Prior::ShapeRate(p) => p.mean(),
        }
    }

    pub fn std(&self) -> f64 {
        match self {
            Prior::MeanStd(p) => p.std,
            Prior::ShapeRate(p) => p.shape.sqrt() / p.rate,
        }
    }

    /// Squared coefficient of variation, (σ/μ)².
    pub fn cv_sq(&self) -> f64 {
        match self {
            Prior::MeanStd(p) => (p.std / p.mean).powi(2),
            Prior::ShapeRate(p) => 1.0 / p.shape,
        }
    }

    pub fn gamma(&self) -> Result<GammaParams> {
        match *self {
            Prior::MeanStd(p) => gamma_from_meanstd(p),
            Prior::ShapeRate(p) => Ok(p),
        }
    }

    pub fn meanstd(&self) -> Result<MeanStdParams> {
        match *self {
            Prior::MeanStd(p) => Ok(p),
            Prior::ShapeRate(p) => meanstd_from_gamma(p),
        }
    }

    pub fn in_coords(&self, parameterization: Parameterization) -> Result<Prior> {
        Ok(match parameterization {
            Parameterization::MeanStd => Prior::MeanStd(self.meanstd()?),
            Parameterization::ShapeRate => Prior::ShapeRate(self.gamma()?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    #[default]
    MeanStd,
    ShapeRate,
}

/// Poisson matrix factorization: θ_ik ~ row prior, β_jk ~ column prior,
/// Y_ij ~ Poisson(Σ_k θ_ik β_jk).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmfHyper {
    pub k: u32,
    pub row: Prior,
    pub col: Prior,
}

impl PmfHyper {
    pub fn new(k: u32, row: Prior, col: Prior) -> Result<Self> {
        let h = PmfHyper { k, row, col };
        h.validate()?;
        Ok(h)
    }

    /// Gamma priors given directly as (a, b) for rows and (c, d) for columns.
    pub fn from_shape_rate(k: u32, a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        Self::new(
            k,
            Prior::ShapeRate(GammaParams::new(a, b)?),
            Prior::ShapeRate(GammaParams::new(c, d)?),
        )
    }

    pub fn from_mean_std(k: u32, mu_theta: f64, sigma_theta: f64, mu_beta: f64, sigma_beta: f64) -> Result<Self> {
        Self::new(
            k,
            Prior::MeanStd(MeanStdParams::new(mu_theta, sigma_theta)?),
            Prior::MeanStd(MeanStdParams::new(mu_beta, sigma_beta)?),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::domain("k", 0.0));
        }
        self.row.validate()?;
        self.col.validate()
    }

    pub fn in_coords(&self, parameterization: Parameterization) -> Result<PmfHyper> {
        Ok(PmfHyper { k: self.k, row: self.row.in_coords(parameterization)?, col: self.col.in_coords(parameterization)? })
    }

    /// Same latent structure with row and column priors exchanged.
    pub fn transposed(&self) -> PmfHyper {
        PmfHyper { k: self.k, row: self.col, col: self.row }
    }
}

/// Compound Poisson matrix factorization: a latent Poisson count feeds an
/// exponential-dispersion observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpmfHyper {
    pub base: PmfHyper,
    pub ed: EdFamily,
}

/// Hierarchical Poisson factorization with Gamma hyperpriors on the
/// per-row and per-column rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpfHyper {
    pub k: u32,
    pub a: f64,
    pub a_prime: f64,
    pub b_prime: f64,
    pub c: f64,
    pub c_prime: f64,
    pub d_prime: f64,
}

impl HpfHyper {
    pub fn new(k: u32, a: f64, a_prime: f64, b_prime: f64, c: f64, c_prime: f64, d_prime: f64) -> Result<Self> {
        let h = HpfHyper { k, a, a_prime, b_prime, c, c_prime, d_prime };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::domain("k", 0.0));
        }
        for (name, v) in self.named() {
            check_positive(name, v)?;
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("a", self.a),
            ("a_prime", self.a_prime),
            ("b_prime", self.b_prime),
            ("c", self.c),
            ("c_prime", self.c_prime),
            ("d_prime", self.d_prime),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparameters {
    Pmf(PmfHyper),
    Cpmf(CpmfHyper),
    Hpf(HpfHyper),
}

impl Hyperparameters {
    pub fn k(&self) -> u32 {
        match self {
            Hyperparameters::Pmf(h) => h.k,
            Hyperparameters::Cpmf(h) => h.base.k,
            Hyperparameters::Hpf(h) => h.k,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparameters::Pmf(_) => ModelKind::Pmf,
            Hyperparameters::Cpmf(_) => ModelKind::Cpmf,
            Hyperparameters::Hpf(_) => ModelKind::Hpf,
        }
    }

    /// Named positive entries in the given coordinates, in packing order.
    pub fn named_values(&self, parameterization: Parameterization) -> Result<Vec<(&'static str, f64)>> {
        let pmf_entries = |h: &PmfHyper| -> Result<Vec<(&'static str, f64)>> {
            Ok(match parameterization {
                Parameterization::MeanStd => {
                    let (r, c) = (h.row.meanstd()?, h.col.meanstd()?);
                    vec![("mu_theta", r.mean), ("sigma_theta", r.std), ("mu_beta", c.mean), ("sigma_beta", c.std)]
                }
                Parameterization::ShapeRate => {
                    let (r, c) = (h.row.gamma()?, h.col.gamma()?);
                    vec![("a", r.shape), ("b", r.rate), ("c", c.shape), ("d", c.rate)]
                }
            })
        };
        match self {
            Hyperparameters::Pmf(h) => pmf_entries(h),
            Hyperparameters::Cpmf(h) => pmf_entries(&h.base),
            Hyperparameters::Hpf(h) => Ok(h.named().to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pmf,
    Cpmf,
    Hpf,
}

/// How an unconstrained coordinate maps to its hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    LogPositive,
    Identity,
}

impl Transform {
    pub fn forward(self, u: f64) -> f64 {
        match self {
            Transform::LogPositive => u.exp(),
            Transform::Identity => u,
        }
    }

    pub fn inverse(self, x: f64) -> f64 {
        match self {
            Transform::LogPositive => x.ln(),
            Transform::Identity => x,
        }
    }

    /// d forward / du at `u`.
    pub fn jacobian(self, u: f64) -> f64 {
        match self {
            Transform::LogPositive => u.exp(),
            Transform::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedVector {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    pub transforms: Vec<Transform>,
    pub parameterization: Parameterization,
}

impl UnconstrainedVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Hyperparameter values after the forward transform.
    pub fn constrained(&self) -> Vec<f64> {
        self.values.iter().zip(&self.transforms).map(|(&u, t)| t.forward(u)).collect()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        UnconstrainedVector { values, ..self.clone() }
    }

    /// Rebuild a hyperparameter object; `template` supplies `k` and the
    /// observation family, which are not packed.
    pub fn unpack(&self, template: &Hyperparameters) -> Result<Hyperparameters> {
        let x = self.constrained();
        let get = |name: &str| -> Result<f64> {
            self.index_of(name)
                .map(|i| x[i])
                .ok_or_else(|| Error::Model(format!("unconstrained vector has no entry `{name}`")))
        };
        let pmf = |k: u32| -> Result<PmfHyper> {
            match self.parameterization {
                Parameterization::MeanStd => {
                    PmfHyper::from_mean_std(k, get("mu_theta")?, get("sigma_theta")?, get("mu_beta")?, get("sigma_beta")?)
                }
                Parameterization::ShapeRate => PmfHyper::from_shape_rate(k, get("a")?, get("b")?, get("c")?, get("d")?),
            }
        };
        Ok(match template {
            Hyperparameters::Pmf(h) => Hyperparameters::Pmf(pmf(h.k)?),
            Hyperparameters::Cpmf(h) => Hyperparameters::Cpmf(CpmfHyper { base: pmf(h.base.k)?, ed: h.ed.clone() }),
            Hyperparameters::Hpf(h) => Hyperparameters::Hpf(HpfHyper::new(
                h.k,
                get("a")?,
                get("a_prime")?,
                get("b_prime")?,
                get("c")?,
                get("c_prime")?,
                get("d_prime")?,
            )?),
        })
    }
}

/// Log-transform every positive hyperparameter. HPF has a single
/// coordinate system, so `parameterization` only affects PMF/CPMF.
pub fn pack(h: &Hyperparameters, parameterization: Parameterization) -> Result<UnconstrainedVector> {
    let entries = h.named_values(parameterization)?;
    for (name, v) in &entries {
        check_positive(name, *v)?;
    }
    let parameterization = match h {
        Hyperparameters::Hpf(_) => Parameterization::ShapeRate,
        _ => parameterization,
    };
    Ok(UnconstrainedVector {
        values: entries.iter().map(|(_, v)| v.ln()).collect(),
        names: entries.iter().map(|(n, _)| n.to_string()).collect(),
        transforms: vec![Transform::LogPositive; entries.len()],
        parameterization,
    })
}

/// On-disk hyperparameter description shared by the CLI subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperFile {
    pub model: ModelKind,
    pub k: u32,
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub parameterization: Parameterization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ed: Option<EdFamily>,
}

impl HyperFile {
    pub fn from_hyper(h: &Hyperparameters, parameterization: Parameterization) -> Result<Self> {
        let params = h.named_values(parameterization)?.into_iter().map(|(n, v)| (n.to_string(), v)).collect();
        let (parameterization, ed) = match h {
            Hyperparameters::Hpf(_) => (Parameterization::ShapeRate, None),
            Hyperparameters::Cpmf(c) => (parameterization, Some(c.ed.clone())),
            Hyperparameters::Pmf(_) => (parameterization, None),
        };
        Ok(HyperFile { model: h.kind(), k: h.k(), params, parameterization, ed })
    }

    pub fn to_hyper(&self) -> Result<Hyperparameters> {
        let get = |name: &str| -> Result<f64> {
            self.params.get(name).copied().ok_or_else(|| Error::Parse(format!("missing hyperparameter `{name}`")))
        };
        let pmf = || -> Result<PmfHyper> {
            match self.parameterization {
                Parameterization::MeanStd => {
                    PmfHyper::from_mean_std(self.k, get("mu_theta")?, get("sigma_theta")?, get("mu_beta")?, get("sigma_beta")?)
                }
                Parameterization::ShapeRate => {
                    PmfHyper::from_shape_rate(self.k, get("a")?, get("b")?, get("c")?, get("d")?)
                }
            }
        };
        Ok(match self.model {
            ModelKind::Pmf => Hyperparameters::Pmf(pmf()?),
            ModelKind::Cpmf => {
                let ed = self.ed.clone().ok_or_else(|| Error::Parse("cpmf model requires an `ed` block".into()))?;
                ed.validate()?;
                Hyperparameters::Cpmf(CpmfHyper { base: pmf()?, ed })
            }
            ModelKind::Hpf => Hyperparameters::Hpf(HpfHyper::new(
                self.k,
                get("a")?,
                get("a_prime")?,
                get("b_prime")?,
                get("c")?,
                get("c_prime")?,
                get("d_prime")?,
            )?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_scenario_conversions() {
        let a = gamma_from_meanstd(MeanStdParams::new(10.0, 3.1623).unwrap()).unwrap();
        assert_relative_eq!(a.shape, 10.0, max_relative = 1e-4);
        assert_relative_eq!(a.rate, 1.0, max_relative = 1e-4);

        let unit = gamma_from_meanstd(MeanStdParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!((unit.shape, unit.rate), (1.0, 1.0));

        let d = gamma_from_meanstd(MeanStdParams::new(0.1, 0.3162).unwrap()).unwrap();
        assert_relative_eq!(d.shape, 0.1, max_relative = 1e-3);
        assert_relative_eq!(d.rate, 1.0, max_relative = 1e-3);

        let b = meanstd_from_gamma(GammaParams::new(10.0, 2.0).unwrap()).unwrap();
        assert_relative_eq!(b.mean, 5.0);
        assert_relative_eq!(b.std, 1.5811, max_relative = 1e-4);

        let g = meanstd_from_gamma(GammaParams::new(1000.0, 1000.0).unwrap()).unwrap();
        assert_relative_eq!(g.mean, 1.0);
        assert_relative_eq!(g.std, 0.0316, max_relative = 1e-3);
    }

    #[test]
    fn conversions_reject_non_positive() {
        let err = gamma_from_meanstd(MeanStdParams { mean: -1.0, std: 1.0 }).unwrap_err();
        assert!(err.to_string().contains("mean"), "{err}");
        let err = meanstd_from_gamma(GammaParams { shape: 1.0, rate: 0.0 }).unwrap_err();
        assert!(err.to_string().contains("rate"), "{err}");
        assert!(MeanStdParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn pack_examples() {
        let row_a = Hyperparameters::Pmf(PmfHyper::from_mean_std(25, 10.0, 3.1623, 10.0, 3.1623).unwrap());
        let v = pack(&row_a, Parameterization::MeanStd).unwrap();
        let expect = [10f64.ln(), 3.1623f64.ln(), 10f64.ln(), 3.1623f64.ln()];
        for (got, want) in v.values.iter().zip(expect) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        assert_eq!(v.names, ["mu_theta", "sigma_theta", "mu_beta", "sigma_beta"]);

        let row_a = Hyperparameters::Pmf(PmfHyper::from_shape_rate(25, 10.0, 1.0, 10.0, 1.0).unwrap());
        let v = pack(&row_a, Parameterization::ShapeRate).unwrap();
        assert_eq!(v.values, vec![10f64.ln(), 0.0, 10f64.ln(), 0.0]);

        let row_k = Hyperparameters::Hpf(HpfHyper::new(25, 1.0, 100.0, 10.0, 1.0, 100.0, 10.0).unwrap());
        let v = pack(&row_k, Parameterization::MeanStd).unwrap();
        let want: Vec<f64> = [1.0f64, 100.0, 10.0, 1.0, 100.0, 10.0].iter().map(|x| x.ln()).collect();
        assert_eq!(v.values, want);
        assert_eq!(v.parameterization, Parameterization::ShapeRate);
    }

    #[test]
    fn hyper_file_json_field_names() {
        let h = Hyperparameters::Pmf(PmfHyper::from_shape_rate(25, 10.0, 1.0, 10.0, 1.0).unwrap());
        let file = HyperFile::from_hyper(&h, Parameterization::MeanStd).unwrap();
        let json = serde_json::to_value(&file).unwrap();
        assert_eq!(json["model"], "pmf");
        assert_eq!(json["parameterization"], "mean_std");
        assert_eq!(json["k"], 25);
        assert!(json["params"]["mu_theta"].is_number());
        assert!(json["params"]["sigma_beta"].is_number());

        let text = r#"{"model":"hpf","k":25,"params":{"a":1,"a_prime":100,"b_prime":10,"c":1,"c_prime":100,"d_prime":10}}"#;
        let file: HyperFile = serde_json::from_str(text).unwrap();
        match file.to_hyper().unwrap() {
            Hyperparameters::Hpf(h) => assert_eq!(h.b_prime, 10.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cpmf_file_requires_ed() {
        let text = r#"{"model":"cpmf","k":5,"params":{"a":1,"b":1,"c":1,"d":1},"parameterization":"shape_rate"}"#;
        let file: HyperFile = serde_json::from_str(text).unwrap();
        assert!(file.to_hyper().is_err());
    }

    fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
        (lo.ln()..hi.ln()).prop_map(f64::exp)
    }

    proptest! {
        #[test]
        fn meanstd_roundtrip(mean in log_uniform(1e-3, 1e3), std in log_uniform(1e-3, 1e3)) {
            let p = MeanStdParams::new(mean, std).unwrap();
            let g = gamma_from_meanstd(p).unwrap();
            let back = meanstd_from_gamma(g).unwrap();
            prop_assert!(((back.mean - mean) / mean).abs() < 1e-12);
            prop_assert!(((back.std - std) / std).abs() < 1e-12);
            // 1/shape is the squared coefficient of variation
            let cv2 = (std / mean).powi(2);
            prop_assert!(((1.0 / g.shape - cv2) / cv2).abs() < 1e-12);
        }

        #[test]
        fn pack_unpack_identity(
            k in 1u32..100,
            x in proptest::collection::vec(log_uniform(1e-3, 1e3), 6),
            shape_rate in any::<bool>(),
        ) {
            let coords = if shape_rate { Parameterization::ShapeRate } else { Parameterization::MeanStd };
            let pmf = PmfHyper::from_mean_std(k, x[0], x[1], x[2], x[3]).unwrap().in_coords(coords).unwrap();
            let ed = EdFamily::poisson_normal(1.0, 1.0).unwrap();
            let hpf = HpfHyper::new(k, x[0], x[1], x[2], x[3], x[4], x[5]).unwrap();
            for h in [
                Hyperparameters::Pmf(pmf),
                Hyperparameters::Cpmf(CpmfHyper { base: pmf, ed: ed.clone() }),
                Hyperparameters::Hpf(hpf),
            ] {
                let v = pack(&h, coords).unwrap();
                let back = v.unpack(&h).unwrap();
                let a = h.named_values(v.parameterization).unwrap();
                let b = back.named_values(v.parameterization).unwrap();
                prop_assert_eq!(back.k(), h.k());
                for ((na, va), (nb, vb)) in a.iter().zip(&b) {
                    prop_assert_eq!(na, nb);
                    prop_assert!(((va - vb) / va).abs() < 1e-12);
                }
            }
        }
    }
}
