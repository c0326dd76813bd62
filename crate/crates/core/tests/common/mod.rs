#![allow(dead_code)]

use num::{BigRational, Signed, ToPrimitive};
use priormatch_core::{EdFamily, HpfHyper, PmfHyper};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

/// PMF reference scenarios: (label, a, b, c, d, reference E[Y], reference Var[Y]).
pub const PMF_SCENARIOS: [(&str, f64, f64, f64, f64, f64, f64); 7] = [
    ("A", 10.0, 1.0, 10.0, 1.0, 2500.00, 55000.00),
    ("B", 10.0, 2.0, 10.0, 2.0, 625.00, 3906.25),
    ("C", 0.001, 0.01, 0.01, 0.1, 0.25, 253.00),
    ("D", 0.1, 1.0, 0.1, 1.0, 0.25, 0.55),
    ("E", 0.1, 0.1, 0.1, 0.1, 25.00, 3025.00),
    ("F", 1.0, 1.0, 0.1, 0.1, 25.00, 550.00),
    ("G", 1000.0, 1000.0, 1000.0, 1000.0, 25.00, 25.05),
];

/// HPF reference scenarios: (label, a, a′, b′, c, c′, d′, reference E[Y]).
pub const HPF_SCENARIOS: [(&str, f64, f64, f64, f64, f64, f64, f64); 6] = [
    ("K", 1.0, 100.0, 10.0, 1.0, 100.0, 10.0, 0.26),
    ("L", 0.1, 100.0, 1.0, 1.0, 100.0, 1.0, 2.55),
    ("M", 50.0, 5000.0, 10.0, 1.0, 5000.0, 1.0, 125.05),
    ("N", 1.0, 100.0, 1.0, 10.0, 10.0, 1.0, 280.57),
    ("O", 450.0, 4500.0, 100.0, 10.0, 400.0, 1.0, 1128.10),
    ("P", 50.0, 50.0, 1.0, 1.0, 50.0, 1.0, 1301.71),
];

pub fn pmf_scenario(label: &str) -> PmfHyper {
    let r = PMF_SCENARIOS.iter().find(|r| r.0 == label).expect("row");
    PmfHyper::from_shape_rate(25, r.1, r.2, r.3, r.4).unwrap()
}

pub fn hpf_scenario(label: &str) -> HpfHyper {
    let r = HPF_SCENARIOS.iter().find(|r| r.0 == label).expect("row");
    HpfHyper::new(25, r.1, r.2, r.3, r.4, r.5, r.6).unwrap()
}

pub fn poisson_normal() -> EdFamily {
    EdFamily::poisson_normal(1.0, 1.0).unwrap()
}

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact E[Y] and Var[Y] of Gamma-prior PMF in rational arithmetic.
pub fn exact_pmf_moments(k: u32, a: f64, b: f64, c: f64, d: f64) -> (BigRational, BigRational) {
    let (a, b, c, d) = (q(a), q(b), q(c), q(d));
    let k = BigRational::from_integer(k.into());
    let mt = &a / &b;
    let mb = &c / &d;
    let vt = &a / (&b * &b);
    let vb = &c / (&d * &d);
    let mean = &k * &mt * &mb;
    let var = &k * (&mt * &mb + &mb * &mb * &vt + &mt * &mt * &vb + &vt * &vb);
    (mean, var)
}

/// |x − exact| / |exact|, evaluated exactly.
pub fn rel_error(x: f64, exact: &BigRational) -> f64 {
    ((q(x) - exact) / exact).abs().to_f64().unwrap()
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap()
}

/// P(a, x); statrs returns 0 below x ≈ 1e-15, so tiny x uses the leading
/// terms x^a/Γ(a+1)·(1 − a·x/(a+1) + a·x²/(2(a+2))).
fn lower_regularized(a: f64, x: f64) -> f64 {
    if x < 1e-8 {
        (a * x.ln() - ln_gamma(a + 1.0)).exp() * (1.0 - a * x / (a + 1.0) + a * x * x / (2.0 * (a + 2.0)))
    } else {
        gamma_lr(a, x)
    }
}

/// CDF level of a Gamma(shape, 1) value as (tail probability, upper?),
/// keeping relative precision in both tails.
pub fn gamma_level(shape: f64, x: f64) -> (f64, bool) {
    let p = lower_regularized(shape, x);
    if p > 0.5 {
        (gamma_ur(shape, x), true)
    } else {
        (p, false)
    }
}

/// Gamma(shape, 1) quantile at probability `u`.
pub fn gamma_quantile(shape: f64, u: f64) -> f64 {
    if u > 0.5 {
        gamma_tail_quantile(shape, 1.0 - u, true)
    } else {
        gamma_tail_quantile(shape, u, false)
    }
}

/// Quantile by bisection in log x on the lower or upper regularized
/// incomplete gamma.
pub fn gamma_tail_quantile(shape: f64, level: f64, upper: bool) -> f64 {
    let below = |x: f64| if upper { gamma_ur(shape, x) > level } else { lower_regularized(shape, x) < level };
    let (mut lo, mut hi) = ((1e-300f64).ln(), (1e4 * (shape + 10.0)).ln());
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// d quantile / d shape of Gamma(shape, rate) at fixed `u` by a central
/// difference with step 1e-5·shape.
pub fn quantile_shape_fd(shape: f64, rate: f64, u: f64) -> f64 {
    let h = 1e-5 * shape;
    (gamma_quantile(shape + h, u) - gamma_quantile(shape - h, u)) / (2.0 * h) / rate
}

/// As [`quantile_shape_fd`] at a tail level from [`gamma_level`].
pub fn tail_quantile_shape_fd(shape: f64, rate: f64, level: f64, upper: bool) -> f64 {
    let h = 1e-5 * shape;
    (gamma_tail_quantile(shape + h, level, upper) - gamma_tail_quantile(shape - h, level, upper)) / (2.0 * h) / rate
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}
