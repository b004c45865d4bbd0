mod common;

use common::{integrate_panels, probit_sample};
use knp::hermite::{std_normal_cdf, std_normal_pdf};
use knp::rng;
use knp::selection::TuningTriple;
use knp::simulation::{
    generate, monomials, refit_kernel, replicate_design, replicate_table, run_replication, score, ErrorSpec, IndexModel, Method, SimConfig,
    SimDesign, Split, Systematic,
};
use knp::OptimizerConfig;

fn quick_config(methods: Vec<Method>) -> SimConfig {
    SimConfig {
        methods,
        grid: vec![TuningTriple::new(10.0, 0, 10), TuningTriple::new(10.0, 2, 10)],
        folds: 3,
        snp_orders: vec![0, 2],
        optimizer: OptimizerConfig {
            n_restarts: 1,
            ..OptimizerConfig::default()
        },
        ..SimConfig::default()
    }
}

fn small(label: &str, nsim: usize) -> SimDesign {
    SimDesign {
        ntrain: 200,
        ntest: 500,
        nsim,
        seed: 17,
        ..label.parse().unwrap()
    }
}

#[test]
fn choice_probabilities_at_known_points() {
    let ia: SimDesign = "IA".parse().unwrap();
    assert_eq!(ia.p0(0.0, &[0.0]), 0.5);
    let ib: SimDesign = "IB".parse().unwrap();
    let expected = 0.25 * std_normal_cdf(3.0) + 0.75 * std_normal_cdf(-2.0);
    assert!((ib.p0(0.0, &[0.0]) - expected).abs() < 1e-15);
    assert!((expected - 0.26672).abs() < 1e-5);
    // the mixture CDF agrees with the integral of its density
    for u in [-4.0, -1.0, 0.5, 3.0] {
        let density = |x: f64| 0.25 * std_normal_pdf(x + 3.0) + 0.75 * std_normal_pdf(x - 2.0);
        let cdf = integrate_panels(&density, -15.0, u, 1e-13);
        assert!((ErrorSpec::B.cdf(u) - cdf).abs() < 1e-10);
    }
    let iia: SimDesign = "IIA".parse().unwrap();
    assert!((Systematic::II.g0(&[0.5]) - 1.125).abs() < 1e-15);
    assert_eq!(iia.w_star(), vec![0.0]);
    assert!(Systematic::III.g0(&[0.0; 10]).abs() < 1e-15 && Systematic::IV.g0(&[0.0; 10]).abs() < 1e-15);
}

#[test]
fn mixture_draws_match_the_distribution() {
    let n = 1_000_000;
    let mut r = rng::stream(3, "mixture-test", 0);
    let draws: Vec<f64> = (0..n).map(|_| ErrorSpec::B.draw(&mut r)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    // variance of the mixture: 1 + 0.25 * 9 + 0.75 * 4 - 0.75^2
    let sd = (1.0 + 2.25 + 3.0 - 0.5625_f64).sqrt();
    assert!((mean - 0.75).abs() < 4.0 * sd / (n as f64).sqrt(), "mean {mean}");
    for cut in [-4.0, -3.0, -1.0, 0.0, 2.0, 3.5] {
        let freq = draws.iter().filter(|&&x| x <= cut).count() as f64 / n as f64;
        let p = ErrorSpec::B.cdf(cut);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "cut {cut}: {freq} vs {p}");
    }
}

#[test]
fn samples_are_reproducible_and_in_range() {
    for label in ["IA", "IIB", "IIIA", "IVB"] {
        let d = small(label, 2);
        let a = generate(&d, Split::Train, 1).unwrap();
        let b = generate(&d, Split::Train, 1).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, generate(&d, Split::Train, 0).unwrap().data);
        assert_ne!(a.data.v(), generate(&d, Split::Test, 1).unwrap().data.v()[..200].to_vec().as_slice());
        assert_eq!(a.data.dim(), d.dim());
        let (lo, hi) = if d.dim() == 1 { (-2.0, 2.0) } else { (0.0, 1.0) };
        assert!(a.data.w().iter().flatten().all(|&x| (lo..hi).contains(&x)));
        for i in 0..a.data.len() {
            assert_eq!(a.g0[i], d.systematic.g0(&a.data.w()[i]));
            assert_eq!(a.p0[i], d.p0(a.data.v()[i], &a.data.w()[i]));
        }
    }
    assert!(generate(&small("IA", 2), Split::Train, 2).is_err());
}

#[test]
fn probit_baseline_recovers_a_linear_index() {
    let data = probit_sample(1500, 1, 31, |w| 0.7 * w[0]);
    let model = IndexModel::probit(&data, &[0.0], 1, Default::default()).unwrap();
    assert!((model.predict_g(&[1.0]).unwrap() - 0.7).abs() < 0.15);
    assert!(model.predict_g(&[0.0]).unwrap().abs() < 1e-12);
    let snp = IndexModel::snp(&data, &[0.0], 0, Default::default()).unwrap();
    assert!((snp.predict_g(&[1.0]).unwrap() - 0.7).abs() < 0.15);
    assert_eq!(snp.v_coef(), 1.0);
    assert_eq!(monomials(10, 2).len(), 65);
}

#[test]
fn single_replication_table_equals_the_replication() {
    let cfg = quick_config(Method::ALL.to_vec());
    let design = small("IA", 1);
    let table = replicate_design(&design, &cfg).unwrap();
    let direct = run_replication(&design, 0, &cfg).unwrap();
    assert_eq!(table.methods.len(), 7);
    for (method, outcome) in direct {
        let result = table.method(method).unwrap();
        assert_eq!(result.mean, outcome.metrics, "{method}");
        if let Some(triple) = outcome.triple {
            let model = refit_kernel(&design, 0, &cfg, &[triple]).unwrap().remove(0);
            let test = generate(&design, Split::Test, 0).unwrap();
            let again = score(&test, |w| model.predict_g(w), |v, w| model.predict_p(v, w)).unwrap();
            assert_eq!(Some(again), outcome.metrics, "{method} refit");
        }
    }
}

#[test]
fn tables_are_deterministic_with_one_column_per_method() {
    let cfg = quick_config(Method::ALL.to_vec());
    let designs = [small("IA", 2)];
    let render = || {
        let table = replicate_table(&designs, &cfg).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let text = render();
    assert_eq!(text, render());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "design,metric,KNP,KPB,SNP,Probit,P2PB,P3PB,P4PB");
    assert_eq!(lines.len(), 5);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 9);
        assert!(cells[2..].iter().all(|c| c.parse::<f64>().is_ok_and(|x| x >= 0.0)), "{line}");
    }
}
