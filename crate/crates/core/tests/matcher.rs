mod common;

use common::*;
use priormatch_core::matcher::*;
use priormatch_core::*;
use rand::Rng;

fn pmf_setup(label: &str, p: Parameterization) -> (LayeredModel, UnconstrainedVector) {
    let h = Hyperparameters::Pmf(pmf_scenario(label));
    (LayeredModel::pmf(25, p), pack(&h, p).unwrap())
}

fn value_only() -> EstimateOptions {
    EstimateOptions { value_only: true, common_random_numbers: false }
}

#[test]
fn normal_reparameterization() {
    let mut r = RngHandle::new(1).rng();
    let mut ds = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let (v, dmu, dsigma) = reparam_normal(&mut r, 0.0, 1.0).unwrap();
        assert_eq!(dmu, 1.0);
        assert_eq!(v, dsigma);
        ds.push(dsigma);
    }
    let (m, _) = mean_var(&ds);
    assert!(m.abs() < 4.0 / (1e5f64).sqrt());
}

#[test]
fn gamma_rate_partial_is_scale_family() {
    let (z, _, drate) = gamma_partials(2.0, 1.0, 3.0).unwrap();
    assert_eq!(z, 3.0);
    assert!((drate + 3.0).abs() < 1e-15);
}

#[test]
fn gamma_shape_partial_has_mean_one_over_rate() {
    let mut r = RngHandle::new(2).rng();
    let ds: Vec<f64> = (0..100_000).map(|_| reparam_gamma(&mut r, 2.0, 1.0).unwrap().1).collect();
    let (m, v) = mean_var(&ds);
    assert!((m - 1.0).abs() < 4.0 * (v / 1e5).sqrt(), "{m}");
}

#[test]
fn gamma_shape_partial_matches_quantile_path() {
    let x = gamma_quantile(2.0, 0.5);
    let (_, dshape, _) = gamma_partials(2.0, 1.0, x).unwrap();
    let fd = quantile_shape_fd(2.0, 1.0, 0.5);
    assert!((dshape / fd - 1.0).abs() < 1e-3, "{dshape} {fd}");

    let mut r = RngHandle::new(3).rng();
    for &(shape, rate) in &[(0.5, 2.0), (10.0, 0.5), (0.1, 1.0)] {
        let tol = if shape < 0.5 { 1e-2 } else { 1e-3 };
        for _ in 0..200 {
            let u: f64 = r.gen_range(1e-6..1.0 - 1e-6);
            let x = gamma_quantile(shape, u);
            let (_, dshape, _) = gamma_partials(shape, rate, x).unwrap();
            let fd = quantile_shape_fd(shape, rate, u);
            assert!((dshape / fd - 1.0).abs() < tol, "shape {shape} u {u}: {dshape} {fd}");
        }
    }
}

#[test]
fn exact_output_moments() {
    let (v, d) = output_conditional_moment(Family::Poisson, &[2.0], Statistic::YSquared).unwrap();
    assert_eq!((v, d[0]), (6.0, 5.0));
    for g in [Statistic::Y, Statistic::YSquared] {
        assert_eq!(output_conditional_moment(Family::Poisson, &[0.0], g).unwrap().0, 0.0);
    }
    assert!(output_conditional_moment(Family::Poisson, &[-1.0], Statistic::Y).is_err());
    let (v, d) = output_conditional_moment(Family::Normal, &[1.5, 2.0], Statistic::YSquared).unwrap();
    assert_eq!((v, d[0], d[1]), (6.25, 3.0, 4.0));
}

#[test]
fn sampled_sum_agrees_with_exact_at_moderate_rate() {
    let mut r = RngHandle::new(4).rng();
    let runs: Vec<f64> = (0..50).map(|_| sampled_discrete_expectation(&mut r, 5.0, Statistic::Y, 10_000).unwrap().0).collect();
    let (m, v) = mean_var(&runs);
    assert!((runs[0] - 5.0).abs() <= 4.0 * v.sqrt(), "{} (sd {})", runs[0], v.sqrt());
    // Values above ~15 are often absent from the sampled support.
    println!("systematic offset at rate 5, c = 10⁴: {:.2e}", m - 5.0);
    assert!(m < 5.0 && m > 4.99);
}

#[test]
fn sampled_sum_is_biased_low_at_small_rate() {
    let mut r = RngHandle::new(5).rng();
    let runs: Vec<f64> = (0..1000).map(|_| sampled_discrete_expectation(&mut r, 0.25, Statistic::Y, 100).unwrap().0).collect();
    let (m, _) = mean_var(&runs);
    let bias = m - 0.25;
    println!("signed bias at rate 0.25, c = 100: {bias:.3e}");
    assert!(bias < 0.0 && bias > -0.25);
}

#[test]
fn sampled_sum_with_one_point_support() {
    let mut r = RngHandle::new(6).rng();
    assert_eq!(sampled_discrete_expectation(&mut r, 0.0, Statistic::YSquared, 10).unwrap(), (0.0, 0.0));
}

#[test]
fn row_a_estimator_envelope() {
    let (model, lambda) = pmf_setup("A", Parameterization::MeanStd);
    let budget = SampleBudget::split(&model, 1000, 10);
    let (mut es, mut vs) = (Vec::new(), Vec::new());
    for rep in 0..1000u64 {
        let m = estimate_prior_moments_with(&model, &lambda, &budget, &RngHandle::new(rep), value_only()).unwrap();
        es.push(m.mean.value);
        vs.push(m.variance());
    }
    let (me, _) = mean_var(&es);
    let (mv, _) = mean_var(&vs);
    assert!((me / 2500.0 - 1.0).abs() < 0.05, "{me}");
    assert!((mv / 55000.0 - 1.0).abs() < 0.15, "{mv}");
}

#[test]
fn degenerate_latents_leave_only_poisson_noise() {
    let h = Hyperparameters::Pmf(PmfHyper::from_mean_std(25, 2.0, 1e-4, 3.0, 1e-4).unwrap());
    let model = LayeredModel::pmf(25, Parameterization::MeanStd);
    let lambda = pack(&h, Parameterization::MeanStd).unwrap();
    let m = estimate_prior_moments(&model, &lambda, &SampleBudget::split(&model, 1000, 10), &RngHandle::new(7)).unwrap();
    assert!((m.mean.value - 150.0).abs() <= 4.0 * m.mean_stderr.max(1e-9), "{} ± {}", m.mean.value, m.mean_stderr);
    assert!((m.variance() / 150.0 - 1.0).abs() < 0.01, "{}", m.variance());
}

#[test]
fn hpf_row_k_mean() {
    let h = Hyperparameters::Hpf(hpf_scenario("K"));
    let model = LayeredModel::hpf(25);
    let lambda = pack(&h, Parameterization::ShapeRate).unwrap();
    let budget = SampleBudget::split(&model, 100_000, 10);
    let m = estimate_prior_moments_with(&model, &lambda, &budget, &RngHandle::new(8), value_only()).unwrap();
    assert!((m.mean.value - 0.26).abs() < 0.01, "{}", m.mean.value);
}

#[test]
fn exact_and_sampled_outputs_agree() {
    let (model, lambda) = pmf_setup("B", Parameterization::MeanStd);
    let budget = SampleBudget::split(&model, 1000, 10_000);
    let exact = estimate_prior_moments_with(&model, &lambda, &budget, &RngHandle::new(9), value_only()).unwrap();
    let sampled_model = model.clone().with_output_mode(OutputMode::Sampled);
    let sampled = estimate_prior_moments_with(&sampled_model, &lambda, &budget, &RngHandle::new(10), value_only()).unwrap();
    let se = exact.mean_stderr.hypot(sampled.mean_stderr);
    assert!((exact.mean.value - sampled.mean.value).abs() < 4.0 * se, "{} {} {se}", exact.mean.value, sampled.mean.value);
}

#[test]
fn gradient_check_rows_a_and_b() {
    for label in ["A", "B"] {
        let (model, lambda) = pmf_setup(label, Parameterization::MeanStd);
        let budget = SampleBudget::split(&model, 1000, 10);
        let r = gradient_check(&model, &lambda, &budget, 1e-4, &RngHandle::new(11)).unwrap();
        assert!(r.max_rel_error < 1e-3, "row {label}: {r:?}");
    }
}

#[test]
fn gradient_check_small_shape() {
    let h = Hyperparameters::Pmf(PmfHyper::from_shape_rate(25, 0.1, 1.0, 2.0, 1.0).unwrap());
    let p = Parameterization::ShapeRate;
    let model = LayeredModel::pmf(25, p);
    let lambda = pack(&h, p).unwrap();
    let r = gradient_check(&model, &lambda, &SampleBudget::split(&model, 200, 1), 1e-4, &RngHandle::new(12)).unwrap();
    let a = r.entries.iter().filter(|e| e.name == "a").map(|e| e.rel_error).fold(0.0, f64::max);
    assert!(a < 1e-2, "{r:?}");
}

#[test]
fn match_mean_from_row_g() {
    let init = Hyperparameters::Pmf(pmf_scenario("G"));
    let mut p = MatchProblem::new(init, Parameterization::MeanStd, MomentSet { mean: Some(10.0), ..Default::default() }).unwrap();
    p.optimizer.max_iterations = 500;
    let r = match_prior(&p).unwrap();
    let Hyperparameters::Pmf(fit) = r.fitted else { panic!("pmf expected") };
    let e = pmf_forward_moments(&fit).mean.unwrap();
    assert!((e / 10.0 - 1.0).abs() < 0.05, "{e}");
    assert!(r.trace.windows(2).all(|w| w[1].iteration == w[0].iteration + 1));
}

#[test]
fn infeasible_target_ends_on_the_boundary() {
    let init = Hyperparameters::Pmf(pmf_scenario("G"));
    let p = MatchProblem::new(init, Parameterization::MeanStd, MomentSet::mean_variance(100.0, 10.0)).unwrap();
    let r = match_prior(&p).unwrap();
    let Hyperparameters::Pmf(fit) = r.fitted else { panic!("pmf expected") };
    let m = pmf_forward_moments(&fit);
    let (e, v) = (m.mean.unwrap(), m.variance.unwrap());
    assert_eq!(r.feasibility, Feasibility::BoundarySuspected);
    assert!((v - e).abs() / e < 0.1, "{e} {v}");
    assert!(r.discrepancy > 0.0);
}

#[test]
fn hpf_joint_match_from_row_k() {
    let init = Hyperparameters::Hpf(hpf_scenario("K"));
    let mut p = MatchProblem::new(init, Parameterization::ShapeRate, MomentSet::mean_variance(10.0, 100.0)).unwrap();
    p.optimizer.max_iterations = 2000;
    let r = match_prior(&p).unwrap();
    let Hyperparameters::Hpf(fit) = r.fitted else { panic!("hpf expected") };
    // Oracle: many independent small matrices from the generative process.
    let rng = RngHandle::new(99);
    let mut ys = Vec::new();
    for s in 0..2000u64 {
        ys.extend_from_slice(simulate_hpf(&rng.derive(s), &fit, 16, 16).unwrap().values());
    }
    let (e, v) = mean_var(&ys);
    assert!((e / 10.0 - 1.0).abs() < 0.10, "{e} ({r:?})");
    assert!((v / 100.0 - 1.0).abs() < 0.25, "{v}");
}

#[test]
fn match_is_deterministic() {
    let init = Hyperparameters::Pmf(pmf_scenario("B"));
    let mut p = MatchProblem::new(init, Parameterization::MeanStd, MomentSet::mean_variance(300.0, 2000.0)).unwrap();
    p.optimizer.max_iterations = 25;
    p.budget = SampleBudget::split(&p.model, 100, 10);
    let a = match_prior(&p).unwrap();
    let b = match_prior(&p).unwrap();
    assert_eq!(format!("{:?}", a.trace), format!("{:?}", b.trace));
    p.optimizer.seed += 1;
    let c = match_prior(&p).unwrap();
    assert_ne!(format!("{:?}", a.trace), format!("{:?}", c.trace));
}

#[test]
fn correlation_targets_are_rejected() {
    let init = Hyperparameters::Pmf(pmf_scenario("B"));
    let p = MatchProblem::new(init, Parameterization::MeanStd, MomentSet::full(1.0, 2.0, 0.1, 0.1)).unwrap();
    assert!(match_prior(&p).is_err());
}

