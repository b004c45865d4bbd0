mod common;

use common::{central_diff, close, integrate_panels};
use knp::hermite::{moments_a, partial_moments_a, std_normal_cdf, std_normal_pdf, MAX_ORDER};
use knp::rng;
use knp::HermiteDistribution;
use rand::Rng;

fn poly(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

fn random_tau(r: &mut impl Rng, order: usize) -> Vec<f64> {
    (0..order).map(|_| r.random_range(-2.0..2.0)).collect()
}

#[test]
fn density_matches_squared_polynomial() {
    let d = HermiteDistribution::new(&[0.3, -0.1]).unwrap();
    let c = [1.0, 0.3, -0.1];
    let psi = integrate_panels(&|x| poly(&c, x).powi(2) * std_normal_pdf(x), -40.0, 40.0, 1e-14);
    let expected = poly(&c, 0.7).powi(2) * std_normal_pdf(0.7) / psi;
    assert!((d.density(0.7) - expected).abs() < 1e-13);
    assert!((d.psi() - psi).abs() < 1e-12);
}

#[test]
fn density_vanishes_at_polynomial_root() {
    let d = HermiteDistribution::new(&[5.0]).unwrap();
    assert!(d.density(-0.2).abs() < 1e-16);
}

#[test]
fn cdf_matches_quadrature() {
    let mut r = rng::stream(11, "hermite-test", 0);
    for _ in 0..40 {
        let order = r.random_range(0..=6);
        let d = HermiteDistribution::new(&random_tau(&mut r, order)).unwrap();
        let u: f64 = r.random_range(-6.0..6.0);
        let q = integrate_panels(&|x| d.density(x), -40.0, u, 1e-13);
        assert!((d.cdf(u) - q).abs() < 1e-9, "J={order} u={u}: {} vs {q}", d.cdf(u));
    }
}

#[test]
fn partial_moments_match_quadrature() {
    for &u in &[-3.0, -0.4, 0.0, 1.3, 5.0] {
        let a = partial_moments_a(u, 8);
        for (h, ah) in a.iter().enumerate() {
            let q = integrate_panels(&|x| x.powi(h as i32) * std_normal_pdf(x), -40.0, u, 1e-14);
            assert!((ah - q).abs() < 1e-10 * (1.0 + q.abs()), "h={h} u={u}");
        }
    }
    let full = moments_a(6);
    for (h, ah) in full.iter().enumerate() {
        let q = integrate_panels(&|x| x.powi(h as i32) * std_normal_pdf(x), -40.0, 40.0, 1e-14);
        assert!((ah - q).abs() < 1e-10, "h={h}");
    }
}

#[test]
fn order_zero_is_standard_normal() {
    let d = HermiteDistribution::standard_normal();
    for k in 0..=200 {
        let u = -8.0 + 16.0 * k as f64 / 200.0;
        assert!((d.cdf(u) - std_normal_cdf(u)).abs() < 1e-14);
        assert!((d.density(u) - std_normal_pdf(u)).abs() < 1e-15);
    }
}

#[test]
fn cdf_gradient_matches_finite_differences() {
    let mut r = rng::stream(12, "hermite-test", 0);
    for _ in 0..30 {
        let order = r.random_range(1..=4);
        let tau = random_tau(&mut r, order);
        let u: f64 = r.random_range(-4.0..4.0);
        let grad = HermiteDistribution::new(&tau).unwrap().cdf_grad_tau(u);
        let f = |t: &[f64]| HermiteDistribution::new(t).unwrap().cdf(u);
        for j in 0..order {
            let fd = central_diff(&f, &tau, j, 1e-5);
            assert!(close(grad[j], fd, 1e-6), "tau={tau:?} u={u} j={j}: {} vs {fd}", grad[j]);
        }
    }
}

#[test]
fn cdf_is_a_distribution_function() {
    let mut r = rng::stream(13, "hermite-test", 0);
    for _ in 0..20 {
        let order = r.random_range(0..=MAX_ORDER);
        let d = HermiteDistribution::new(&random_tau(&mut r, order)).unwrap();
        let mut prev = 0.0;
        for k in 0..=400 {
            let c = d.cdf(-10.0 + 20.0 * k as f64 / 400.0);
            assert!((0.0..=1.0).contains(&c));
            assert!(c >= prev - 1e-15, "J={order} decreasing at step {k}");
            prev = c;
        }
        assert_eq!(d.cdf(-50.0), 0.0);
        assert_eq!(d.cdf(50.0), 1.0);
    }
}

#[test]
fn coefficient_scale_is_irrelevant() {
    let a = HermiteDistribution::from_coefficients(&[2.0, 0.6, -0.2]).unwrap();
    let b = HermiteDistribution::new(&[0.3, -0.1]).unwrap();
    for &u in &[-2.0, 0.0, 0.7, 3.0] {
        assert!((a.cdf(u) - b.cdf(u)).abs() < 1e-15);
    }
    assert!(HermiteDistribution::new(&[0.1; MAX_ORDER + 1]).is_err());
}

#[test]
fn serde_round_trip() {
    let d = HermiteDistribution::new(&[0.25, -0.5, 0.125]).unwrap();
    let json = serde_json::to_string(&d).unwrap();
    let back: HermiteDistribution = serde_json::from_str(&json).unwrap();
    assert_eq!(back, d);
}
