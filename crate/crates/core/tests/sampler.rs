mod common;

use common::*;
use priormatch_core::*;

#[test]
fn gamma_sample_means() {
    let rng = RngHandle::new(3);
    let xs = sample_gamma(&rng.derive(0), GammaParams::new(1.0, 1.0).unwrap(), 1_000_000).unwrap();
    let (m, _) = mean_var(&xs);
    assert!((m - 1.0).abs() < 4.0 / 1000.0);

    let xs = sample_gamma(&rng.derive(1), GammaParams::new(10.0, 2.0).unwrap(), 1_000_000).unwrap();
    let (m, v) = mean_var(&xs);
    assert!((m - 5.0).abs() < 4.0 * (2.5f64 / 1e6).sqrt());
    assert!((v / 2.5 - 1.0).abs() < 0.01);

    // shape 0.1: sd 1/√10 per draw
    let xs = sample_gamma(&rng.derive(2), GammaParams::new(0.1, 1.0).unwrap(), 1_000_000).unwrap();
    let (m, _) = mean_var(&xs);
    assert!((m - 0.1).abs() < 4.0 * (0.1f64 / 1e6).sqrt());
    assert!(xs.iter().all(|&x| x >= 0.0));
}

#[test]
fn tiny_shape_is_finite_and_mean_correct() {
    let xs = sample_gamma(&RngHandle::new(5), GammaParams::new(0.001, 0.01).unwrap(), 1_000_000).unwrap();
    assert!(xs.iter().all(|x| x.is_finite() && *x >= 0.0));
    let (m, _) = mean_var(&xs);
    // mean 0.1, sd √10 per draw
    assert!((m - 0.1).abs() < 4.0 * (10.0f64 / 1e6).sqrt());
}

#[test]
fn pmf_row_a_mean() {
    let m = simulate_pmf(&RngHandle::new(1), &pmf_scenario("A"), 1000, 1000).unwrap();
    let (mean, _) = mean_var(m.values());
    assert!((mean / 2500.0 - 1.0).abs() < 0.02, "{mean}");
    assert!(m.values().iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
}

#[test]
fn near_deterministic_rates_give_poisson_dispersion() {
    let h = PmfHyper::from_mean_std(1, 30.0, 1e-6, 30.0, 1e-6).unwrap();
    let m = simulate_pmf(&RngHandle::new(2), &h, 500, 500).unwrap();
    let (mean, var) = mean_var(m.values());
    assert!((var / mean - 1.0).abs() < 0.02, "{}", var / mean);
}

#[test]
fn cpmf_poisson_normal_moments() {
    let h = CpmfHyper { base: pmf_scenario("A"), ed: poisson_normal() };
    let m = simulate_cpmf(&RngHandle::new(4), &h, 1000, 1000).unwrap();
    let (mean, var) = mean_var(m.values());
    assert!((mean / 2500.0 - 1.0).abs() < 0.02, "{mean}");
    assert!((var / 57500.0 - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn cpmf_with_unit_summands_matches_pmf() {
    let base = pmf_scenario("B");
    let h = CpmfHyper { base, ed: EdFamily::degenerate(1.0).unwrap() };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for s in 0..2000u64 {
        a.extend_from_slice(simulate_cpmf(&RngHandle::new(10).derive(s), &h, 8, 8).unwrap().values());
        b.extend_from_slice(simulate_pmf(&RngHandle::new(20).derive(s), &base, 8, 8).unwrap().values());
    }
    let ((ma, va), (mb, vb)) = (mean_var(&a), mean_var(&b));
    assert!(a.iter().all(|v| v.fract() == 0.0));
    assert!((ma / mb - 1.0).abs() < 0.02, "{ma} {mb}");
    assert!((va / vb - 1.0).abs() < 0.06, "{va} {vb}");
}

#[test]
fn empty_compound_sum_is_zero() {
    // Normal summands hit 0 with probability zero, so exact zeros are N = 0.
    let base = PmfHyper::from_mean_std(1, 0.05, 0.01, 0.05, 0.01).unwrap();
    let h = CpmfHyper { base, ed: poisson_normal() };
    let m = simulate_cpmf(&RngHandle::new(6), &h, 200, 200).unwrap();
    let zeros = m.values().iter().filter(|v| **v == 0.0).count();
    assert!(zeros as f64 / 40_000.0 > 0.99, "{zeros}");
}

#[test]
fn hpf_scenario_means() {
    for (label, e, tol) in [("K", 0.26, 0.01), ("P", 1301.71, 0.03 * 1301.71)] {
        let h = hpf_scenario(label);
        let rng = RngHandle::new(8);
        let mut ys = Vec::with_capacity(1 << 20);
        for s in 0..1024u64 {
            ys.extend_from_slice(simulate_hpf(&rng.derive(s), &h, 32, 32).unwrap().values());
        }
        let (mean, _) = mean_var(&ys);
        assert!((mean - e).abs() < tol, "row {label}: {mean}");
    }
}

#[test]
fn hpf_with_concentrated_hyperprior_matches_pmf() {
    // a′ = c′ = 10⁶ pins the rates ξ at b′ and η at d′.
    let hpf = HpfHyper::new(5, 2.0, 1e6, 0.5, 3.0, 1e6, 1.0).unwrap();
    let pmf = PmfHyper::from_shape_rate(5, 2.0, 0.5, 3.0, 1.0).unwrap();
    let oracle = pmf_forward_moments(&pmf);
    let rng = RngHandle::new(9);
    let mut ys = Vec::new();
    for s in 0..4000u64 {
        ys.extend_from_slice(simulate_hpf(&rng.derive(s), &hpf, 16, 16).unwrap().values());
    }
    let (mean, var) = mean_var(&ys);
    assert!((mean / oracle.mean.unwrap() - 1.0).abs() < 0.02, "{mean} {:?}", oracle.mean);
    assert!((var / oracle.variance.unwrap() - 1.0).abs() < 0.05, "{var} {:?}", oracle.variance);
}

#[test]
fn fixed_seed_is_bit_identical() {
    let h = pmf_scenario("E");
    let a = simulate_pmf(&RngHandle::new(42), &h, 130, 70).unwrap();
    let b = simulate_pmf(&RngHandle::new(42), &h, 130, 70).unwrap();
    assert_eq!(a, b);
    let c = CpmfHyper { base: pmf_scenario("A"), ed: poisson_normal() };
    assert_eq!(simulate_cpmf(&RngHandle::new(1), &c, 70, 90).unwrap(), simulate_cpmf(&RngHandle::new(1), &c, 70, 90).unwrap());
    let hp = hpf_scenario("L");
    assert_eq!(simulate_hpf(&RngHandle::new(1), &hp, 70, 90).unwrap(), simulate_hpf(&RngHandle::new(1), &hp, 70, 90).unwrap());
}

#[test]
fn thread_count_does_not_change_output() {
    let h = pmf_scenario("B");
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = serial.install(|| simulate_pmf(&RngHandle::new(7), &h, 300, 50).unwrap());
    let b = wide.install(|| simulate_pmf(&RngHandle::new(7), &h, 300, 50).unwrap());
    assert_eq!(a, b);
}

#[test]
fn distinct_streams_are_uncorrelated() {
    let h = pmf_scenario("D");
    let (n, m) = (400, 400);
    let a = simulate_pmf(&RngHandle::with_stream(5, 1), &h, n, m).unwrap();
    let b = simulate_pmf(&RngHandle::with_stream(5, 2), &h, n, m).unwrap();
    let (ma, va) = mean_var(a.values());
    let (mb, vb) = mean_var(b.values());
    let cov: f64 =
        a.values().iter().zip(b.values()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n * m - 1) as f64;
    let r = cov / (va * vb).sqrt();
    assert!(r.abs() < 4.0 / ((n * m) as f64).sqrt(), "{r}");
}

#[test]
fn csv_round_trip() {
    let h = CpmfHyper { base: pmf_scenario("B"), ed: poisson_normal() };
    let m = simulate_cpmf(&RngHandle::new(1), &h, 5, 7).unwrap();
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    let back = DataMatrix::read_csv(buf.as_slice()).unwrap();
    assert_eq!(m, back);
}
