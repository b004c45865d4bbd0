//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use knp::rng;
use knp::Dataset;
use rand::Rng;
use rand_distr::StandardNormal;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Integral split into unit panels, so narrow features are not missed.
pub fn integrate_panels(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let panels = ((b - a).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| integrate(f, a + k as f64 * h, a + (k + 1) as f64 * h, tol / panels as f64))
        .sum()
}

/// Central difference of `f` at `x` along coordinate `j`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], j: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[j] += h;
    down[j] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

/// Relative agreement with an absolute floor for near-zero values.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
}

/// `Y = 1{V + g(W) - eps > 0}` with `V, eps ~ N(0,1)` and `W ~ U[-2,2]^d`.
pub fn probit_sample(n: usize, dim: usize, seed: u64, g: impl Fn(&[f64]) -> f64) -> Dataset {
    let mut r = rng::stream(seed, "test-sample", 0);
    loop {
        let mut y = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            let vi: f64 = r.sample(StandardNormal);
            let wi: Vec<f64> = (0..dim).map(|_| r.random_range(-2.0..2.0)).collect();
            let eps: f64 = r.sample(StandardNormal);
            y.push(if vi + g(&wi) - eps > 0.0 { 1.0 } else { 0.0 });
            v.push(vi);
            w.push(wi);
        }
        match Dataset::new(y, v, w) {
            Ok(d) => return d,
            Err(e) if e.to_string().contains("constant") => continue,
            Err(e) => panic!("{e}"),
        }
    }
}
