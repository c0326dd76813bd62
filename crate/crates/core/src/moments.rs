//! Moment estimates from an observed or simulated matrix.
//!
//! The correlations are pooled-moment estimates: entries are centred at the
//! grand mean and scaled by the grand variance, so ρ̂₁ estimates
//! Cov(Y_ij, Y_il)/Var(Y) over the joint prior predictive rather than the
//! correlation conditional on fixed column factors.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::analytic::{cpmf_solve, pmf_solve, EdFamily, InverseSolution, MomentSet};
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::rng::RngHandle;
use crate::sampler::DataMatrix;

/// Pair cap per correlation; 0 uses every pair (closed form, O(NM)).
pub const DEFAULT_MAX_PAIRS: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    #[serde(flatten)]
    pub moments: MomentSet,
    pub stderr_mean: f64,
    pub stderr_variance: f64,
    pub stderr_rho1: f64,
    pub stderr_rho2: f64,
    pub n_pairs_rho1: usize,
    pub n_pairs_rho2: usize,
    /// Set when a correlation estimate fell outside [0, 1] and was clipped.
    pub clipped: bool,
}

struct PairCorrelation {
    value: f64,
    stderr: f64,
    pairs: usize,
}

/// Unordered pair (j, l), j < l, with linear index l(l−1)/2 + j.
fn decode_pair(p: usize) -> (usize, usize) {
    let mut l = ((1.0 + (1.0 + 8.0 * p as f64).sqrt()) / 2.0).floor() as usize;
    while l * (l - 1) / 2 > p {
        l -= 1;
    }
    while (l + 1) * l / 2 <= p {
        l += 1;
    }
    (p - l * (l - 1) / 2, l)
}

/// Same-row correlation over column pairs. Each row i contributes
/// q_i = mean over pairs of c_ij·c_il / v; the estimate is mean_i q_i.
fn row_pair_correlation(m: &DataMatrix, mean: f64, var: f64, max_pairs: usize, rng: &RngHandle) -> PairCorrelation {
    let cols = m.cols();
    let total = cols * (cols - 1) / 2;
    let q: Vec<f64> = if max_pairs == 0 || max_pairs >= total {
        let denom = (cols * (cols - 1)) as f64 * var;
        (0..m.rows())
            .map(|i| {
                let (s, s2) = m.row(i).iter().fold((0.0, 0.0), |(s, s2), y| {
                    let c = y - mean;
                    (s + c, s2 + c * c)
                });
                (s * s - s2) / denom
            })
            .collect()
    } else {
        let mut r = rng.rng();
        let pairs: Vec<(usize, usize)> = index::sample(&mut r, total, max_pairs).into_iter().map(decode_pair).collect();
        let denom = pairs.len() as f64 * var;
        (0..m.rows())
            .map(|i| {
                let row = m.row(i);
                pairs.iter().map(|&(j, l)| (row[j] - mean) * (row[l] - mean)).sum::<f64>() / denom
            })
            .collect()
    };
    let n = q.len() as f64;
    let value = q.iter().sum::<f64>() / n;
    let sd = (q.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    PairCorrelation { value, stderr: sd / n.sqrt(), pairs: if max_pairs == 0 { total } else { max_pairs.min(total) } }
}

pub fn estimate_moments(m: &DataMatrix, max_pairs: usize, rng: &RngHandle) -> Result<MomentEstimate> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows < 2 || cols < 2 {
        return Err(Error::Dimension { rows, cols });
    }
    let values = m.values();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), y| {
        let d2 = (y - mean).powi(2);
        (a + d2, b + d2 * d2)
    });
    if m2 == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let variance = m2 / (n - 1.0);
    let stderr_mean = (variance / n).sqrt();
    let stderr_variance = ((m4 / n - (m2 / n).powi(2)).max(0.0) / n).sqrt();

    let r1 = row_pair_correlation(m, mean, variance, max_pairs, &rng.derive(1));
    let r2 = row_pair_correlation(&m.transpose(), mean, variance, max_pairs, &rng.derive(2));
    let clip = |x: f64| x.clamp(0.0, 1.0);
    let clipped = clip(r1.value) != r1.value || clip(r2.value) != r2.value;

    Ok(MomentEstimate {
        moments: MomentSet::full(mean, variance, clip(r1.value), clip(r2.value)),
        stderr_mean,
        stderr_variance,
        stderr_rho1: r1.stderr,
        stderr_rho2: r2.stderr,
        n_pairs_rho1: r1.pairs,
        n_pairs_rho2: r2.pairs,
        clipped,
    })
}

/// Moments of `m` fed into the matching inverse solver.
pub fn estimate_k(
    m: &DataMatrix,
    model: ModelKind,
    ed: Option<&EdFamily>,
    max_pairs: usize,
    rng: &RngHandle,
) -> Result<InverseSolution> {
    let est = estimate_moments(m, max_pairs, rng)?;
    match (model, ed) {
        (ModelKind::Pmf, _) => pmf_solve(&est.moments),
        (ModelKind::Cpmf, Some(ed)) => cpmf_solve(&est.moments, ed),
        (ModelKind::Cpmf, None) => Err(Error::Model("cpmf needs an observation family".into())),
        (ModelKind::Hpf, _) => Err(Error::Model("no closed-form solver for hpf".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PmfHyper;
    use crate::sampler::{poisson_draw, simulate_pmf};
    use approx::assert_relative_eq;

    #[test]
    fn two_by_two() {
        let m = DataMatrix::new(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let est = estimate_moments(&m, 0, &RngHandle::new(0)).unwrap();
        assert_relative_eq!(est.moments.mean.unwrap(), 2.5);
        assert_relative_eq!(est.moments.variance.unwrap(), 5.0 / 3.0, max_relative = 1e-15);
        assert_eq!(est.n_pairs_rho1, 1);
    }

    #[test]
    fn errors() {
        let flat = DataMatrix::new(2, 3, vec![4.0; 6]).unwrap();
        assert!(matches!(estimate_moments(&flat, 0, &RngHandle::new(0)), Err(Error::DegenerateVariance)));
        let thin = DataMatrix::new(1, 3, vec![1., 2., 3.]).unwrap();
        assert!(matches!(estimate_moments(&thin, 0, &RngHandle::new(0)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pair_decoding_is_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..45 {
            let (j, l) = decode_pair(p);
            assert!(j < l && l < 10);
            assert!(seen.insert((j, l)));
        }
    }

    #[test]
    fn sampled_pairs_close_to_all_pairs() {
        let h = PmfHyper::from_shape_rate(5, 2.0, 1.0, 2.0, 1.0).unwrap();
        let m = simulate_pmf(&RngHandle::new(3), &h, 300, 300).unwrap();
        let all = estimate_moments(&m, 0, &RngHandle::new(1)).unwrap();
        let some = estimate_moments(&m, 2000, &RngHandle::new(1)).unwrap();
        let se = some.stderr_rho1.hypot(all.stderr_rho1);
        assert!((all.moments.rho1.unwrap() - some.moments.rho1.unwrap()).abs() < 4.0 * se);
        assert_eq!(some.n_pairs_rho1, 2000);
    }

    #[test]
    fn transpose_swaps_correlations() {
        let h = PmfHyper::from_shape_rate(3, 1.0, 1.0, 4.0, 2.0).unwrap();
        let m = simulate_pmf(&RngHandle::new(5), &h, 40, 60).unwrap();
        let a = estimate_moments(&m, 0, &RngHandle::new(0)).unwrap();
        let b = estimate_moments(&m.transpose(), 0, &RngHandle::new(0)).unwrap();
        assert_relative_eq!(a.moments.rho1.unwrap(), b.moments.rho2.unwrap(), max_relative = 1e-12);
        assert_relative_eq!(a.moments.rho2.unwrap(), b.moments.rho1.unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn iid_poisson_has_no_structure() {
        let mut r = RngHandle::new(8).rng();
        let values = (0..200 * 200).map(|_| poisson_draw(&mut r, 5.0) as f64).collect();
        let m = DataMatrix::new(200, 200, values).unwrap();
        let est = estimate_moments(&m, 0, &RngHandle::new(0)).unwrap();
        assert!(est.moments.rho1.unwrap() < 4.0 * est.stderr_rho1);
        assert!(est.moments.rho2.unwrap() < 4.0 * est.stderr_rho2);
        assert!(estimate_k(&m, ModelKind::Pmf, None, 0, &RngHandle::new(0)).unwrap_err().is_infeasible());
    }
}
