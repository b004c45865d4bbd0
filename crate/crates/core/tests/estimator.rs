mod common;

use common::{central_diff, close, probit_sample};
use knp::hermite::std_normal_cdf;
use knp::{
    check_pc_bound, fit, fit_prepared, rng, FitConfig, HermiteDistribution, KnpError, KnpModel, PcProblem,
    PreparedSample, WStarPolicy,
};
use rand::Rng;

fn small_config(radius: f64, order: usize, components: usize) -> FitConfig {
    FitConfig {
        radius,
        hermite_order: order,
        components,
        ..FitConfig::default()
    }
}

#[test]
fn zero_coefficients_give_the_probit_loss() {
    let data = probit_sample(15, 1, 1, |w| w[0]);
    let prepared = PreparedSample::new(&data, 1.0, &WStarPolicy::Centered).unwrap();
    let problem = PcProblem::new(prepared.data(), &prepared.gram().truncate(4).unwrap(), 2.0, 0).unwrap();
    let expected = (0..data.len())
        .map(|i| (data.y()[i] - std_normal_cdf(data.v()[i])).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    let got = problem.objective(&vec![0.0; problem.components()], &HermiteDistribution::standard_normal());
    assert!((got - expected).abs() < 1e-15);
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut r = rng::stream(31, "estimator-test", 0);
    for inst in 0..50 {
        let n = r.random_range(10..=20);
        let m = r.random_range(1..=5).min(n);
        let order = r.random_range(0..=4);
        let dim = r.random_range(1..=3);
        let data = probit_sample(n, dim, 300 + inst, |w| w.iter().sum());
        let prepared = PreparedSample::new(&data, 1.0, &WStarPolicy::Centered).unwrap();
        let trunc = prepared.gram().truncate(m).unwrap();
        let problem = PcProblem::new(prepared.data(), &trunc, 5.0, order).unwrap();
        let k = problem.components();
        let zeta: Vec<f64> = trunc.eigenvalues[..k].iter().map(|l| l.sqrt() * r.random_range(-1.0..1.0)).collect();
        let tau: Vec<f64> = (0..order).map(|_| r.random_range(-1.0..1.0)).collect();
        let dist = HermiteDistribution::new(&tau).unwrap();
        let (gz, gt) = problem.objective_grad(&zeta, &dist);
        for j in 0..k {
            let h = 1e-6 * trunc.eigenvalues[j].sqrt().max(1e-3);
            let fd = central_diff(&|z| problem.objective(z, &dist), &zeta, j, h);
            assert!(close(gz[j], fd, 1e-6), "instance {inst}: d/dzeta_{j} {} vs {fd}", gz[j]);
        }
        for j in 0..order {
            let fd = central_diff(&|t| problem.objective(&zeta, &HermiteDistribution::new(t).unwrap()), &tau, j, 1e-6);
            assert!(close(gt[j], fd, 1e-6), "instance {inst}: d/dtau_{j} {} vs {fd}", gt[j]);
        }
    }
}

fn check_model(model: &KnpModel) {
    assert_eq!(model.predict_g(model.w_star_raw()).unwrap(), 0.0);
    let mut prev = 0.0;
    for k in 0..400 {
        let c = model.dist().cdf(-10.0 + 20.0 * k as f64 / 399.0);
        assert!(c >= prev && (0.0..=1.0).contains(&c));
        prev = c;
    }
    let b2 = model.config().radius.powi(2);
    assert!(model.constraint_value() <= b2 * (1.0 + 1e-9));
}

#[test]
fn fitted_model_is_normalized_and_feasible() {
    let data = probit_sample(200, 2, 2, |w| w[0] - 0.5 * w[1] * w[1]);
    for order in [0, 2, 4] {
        let model = fit(&data, &small_config(3.0, order, 20)).unwrap();
        assert!(model.diagnostics().converged);
        check_model(&model);
        for i in 0..data.len() {
            let p = model.predict_p(data.v()[i], &data.w()[i]).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let data = probit_sample(120, 1, 3, |w| w[0]);
    let cfg = small_config(5.0, 2, 10);
    let a = fit(&data, &cfg).unwrap();
    let b = fit(&data, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn index_gradient_matches_finite_differences() {
    let data = probit_sample(150, 3, 4, |w| w[0] * w[1] + w[2]);
    let model = fit(&data, &small_config(5.0, 0, 20)).unwrap();
    let w = [0.3, -0.7, 1.1];
    let g = model.grad_g(&w).unwrap();
    for j in 0..3 {
        let fd = central_diff(&|x| model.predict_g(x).unwrap(), &w, j, 1e-6);
        assert!(close(g[j], fd, 1e-6));
    }
}

#[test]
fn model_serialization_is_exact() {
    let data = probit_sample(100, 2, 5, |w| w[0]);
    let model = fit(&data, &small_config(3.0, 2, 10)).unwrap();
    let back: KnpModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
    for i in 0..data.len() {
        let (v, w) = (data.v()[i], &data.w()[i]);
        assert_eq!(back.predict_p(v, w).unwrap().to_bits(), model.predict_p(v, w).unwrap().to_bits());
    }
}

#[test]
fn zero_index_model_is_probit() {
    let data = probit_sample(50, 1, 6, |w| w[0]);
    let model = KnpModel::zero_index(&data, HermiteDistribution::standard_normal()).unwrap();
    for &v in &[-2.0, 0.0, 0.5] {
        assert!((model.predict_p(v, &[1.3]).unwrap() - std_normal_cdf(v)).abs() < 1e-15);
    }
    assert!(model.objective().is_nan());
    let back: KnpModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
    assert_eq!(back, model);
}

#[test]
fn strict_rank_rejects_excess_components() {
    let data = probit_sample(60, 1, 7, |w| w[0]);
    let cfg = FitConfig {
        strict_rank: true,
        ..small_config(3.0, 0, 61)
    };
    assert!(matches!(fit(&data, &cfg), Err(KnpError::RankExceeded { requested: 61, .. })));
    let relaxed = fit(&data, &small_config(3.0, 0, 61)).unwrap();
    assert!(relaxed.effective_components() < 61);
}

#[test]
fn user_supplied_normalization_point() {
    let data = probit_sample(100, 1, 8, |w| w[0]);
    let cfg = FitConfig {
        w_star: WStarPolicy::Point(vec![0.5]),
        ..small_config(3.0, 0, 10)
    };
    let model = fit(&data, &cfg).unwrap();
    assert_eq!(model.w_star_raw(), &[0.5]);
    assert_eq!(model.predict_g(&[0.5]).unwrap(), 0.0);
}

#[test]
fn truncated_fit_respects_the_suboptimality_bound() {
    let data = probit_sample(80, 1, 9, |w| w[0] * w[0] / 2.0 + (std::f64::consts::PI * w[0]).sin());
    let prepared = PreparedSample::new(&data, 1.0, &WStarPolicy::Centered).unwrap();
    let full = fit_prepared(&prepared, &small_config(3.0, 2, 81)).unwrap();
    for m in [1, 3, 6] {
        let pc = fit_prepared(&prepared, &small_config(3.0, 2, m)).unwrap();
        let report = check_pc_bound(&pc, full.objective());
        assert!(report.holds, "m={m}: {report:?}");
        assert!(report.residual_eigenvalue > 0.0);
    }
}

#[test]
fn probit_design_recovers_the_index() {
    let data = probit_sample(1000, 1, 10, |w| w[0]);
    let model = fit(&data, &small_config(10.0, 0, 25)).unwrap();
    let rmse = ((0..41)
        .map(|k| {
            let w = -1.6 + 3.2 * k as f64 / 40.0;
            (model.predict_g(&[w]).unwrap() - w).powi(2)
        })
        .sum::<f64>()
        / 41.0)
        .sqrt();
    assert!(rmse < 0.3, "rmse {rmse}");
}
