//! Quasi-Newton minimization over an ellipsoid.
//!
//! Each iteration minimizes the local quadratic model
//! `g'(z - x) + (z - x)' H (z - x) / 2` over the feasible ellipsoid. When the
//! unconstrained model step leaves the ellipsoid the minimizer sits on the
//! boundary and solves `(H + mu M) z = H x - g`, where `M` is the ellipsoid
//! metric; `mu >= 0` is found by safeguarded Newton iteration on the secular
//! equation `1/sqrt(z'Mz) = 1`. A backtracking Armijo search along `z - x`
//! stays feasible by convexity, and `H` is refreshed with damped BFGS updates.

use faer::Mat;

use crate::linalg::cholesky_solve;

/// Smooth objective with an analytic gradient.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the value.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Positive semidefinite curvature estimate used to seed the quasi-Newton matrix.
    fn curvature(&self, _x: &[f64]) -> Option<Mat<f64>> {
        None
    }
}

/// `{x : sum_j x_j^2 / c_j <= 1}` acting on the leading `c.len()` coordinates.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    semi_axes_sq: Vec<f64>,
}

impl Ellipsoid {
    /// `{zeta : zeta' diag(eigenvalues)^{-1} zeta <= radius^2}`.
    pub fn from_eigenvalues(eigenvalues: &[f64], radius: f64) -> Self {
        Self {
            semi_axes_sq: eigenvalues.iter().map(|l| l * radius * radius).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.semi_axes_sq.len()
    }

    /// `sum_j x_j^2 / c_j`; feasible points have value at most one.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.semi_axes_sq.iter().zip(x).map(|(c, v)| v * v / c).sum()
    }

    /// Euclidean projection of the constrained coordinates, in place.
    pub fn project(&self, x: &mut [f64]) {
        let q = self.quadratic_form(x);
        if q <= 1.0 {
            return;
        }
        let c = &self.semi_axes_sq;
        let y: Vec<f64> = x[..c.len()].to_vec();
        // phi(mu) = sum y_j^2 c_j / (c_j + mu)^2 decreases from q > 1 to 0.
        let phi = |mu: f64| -> (f64, f64) {
            let mut v = 0.0;
            let mut dv = 0.0;
            for (yj, cj) in y.iter().zip(c) {
                let t = cj + mu;
                v += yj * yj * cj / (t * t);
                dv -= 2.0 * yj * yj * cj / (t * t * t);
            }
            (v, dv)
        };
        let mut lo = 0.0;
        let mut hi = y.iter().zip(c).map(|(yj, cj)| yj * yj * cj).sum::<f64>().sqrt();
        let mut mu = 0.0;
        for _ in 0..200 {
            let (v, dv) = phi(mu);
            if (v - 1.0).abs() < 1e-14 {
                break;
            }
            if v > 1.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            // Newton on 1/sqrt(phi) - 1, which is close to linear in mu.
            let r = 1.0 / v.sqrt() - 1.0;
            let dr = -0.5 * dv / (v * v.sqrt());
            let next = mu - r / dr;
            mu = if next.is_finite() && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        for ((xj, yj), cj) in x.iter_mut().zip(&y).zip(c) {
            *xj = yj * cj / (cj + mu);
        }
        let q = self.quadratic_form(x);
        if q > 1.0 {
            let s = 1.0 / q.sqrt();
            x[..c.len()].iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// `|x - P(x - grad)|` at the returned point.
    pub projected_gradient: f64,
    pub converged: bool,
}

fn projected_gradient_norm(x: &[f64], g: &[f64], constraint: Option<&Ellipsoid>) -> f64 {
    let mut t: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    if let Some(e) = constraint {
        e.project(&mut t);
    }
    x.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn regularized(h: &Mat<f64>) -> Mat<f64> {
    let p = h.nrows();
    let scale = (0..p).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut out = h.clone();
    for i in 0..p {
        out[(i, i)] += 1e-10 * scale;
    }
    out
}

fn solve_spd(h: &Mat<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let p = h.nrows();
    let mut ridge = 0.0;
    let scale = (0..p).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    for _ in 0..8 {
        let mut a = h.clone();
        for i in 0..p {
            a[(i, i)] += ridge;
        }
        if let Some(out) = cholesky_solve(&a, rhs).filter(|x| x.iter().all(|v| v.is_finite())) {
            return Some(out);
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
    }
    None
}

/// Minimizer of the quadratic model over the ellipsoid, returned as the step `z - x`.
fn model_step(h: &Mat<f64>, x: &[f64], g: &[f64], constraint: Option<&Ellipsoid>) -> Option<Vec<f64>> {
    let p = x.len();
    let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
    let step = solve_spd(h, &neg_g)?;
    let Some(e) = constraint else {
        return Some(step);
    };
    let z: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
    if e.quadratic_form(&z) <= 1.0 {
        return Some(step);
    }

    let k = e.dim();
    let hx: Vec<f64> = (0..p).map(|i| (0..p).map(|j| h[(i, j)] * x[j]).sum::<f64>() - g[i]).collect();
    let metric = |j: usize| if j < k { 1.0 / e.semi_axes_sq[j] } else { 0.0 };
    let solve_at = |mu: f64| -> Option<(Vec<f64>, f64, f64)> {
        let mut a = h.clone();
        for j in 0..k {
            a[(j, j)] += mu * metric(j);
        }
        let z = solve_spd(&a, &hx)?;
        let mz: Vec<f64> = (0..p).map(|j| metric(j) * z[j]).collect();
        let q: f64 = z.iter().zip(&mz).map(|(a, b)| a * b).sum();
        let dz = solve_spd(&a, &mz)?;
        let dq = -2.0 * mz.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>();
        Some((z, q, dq))
    };

    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut mu = 0.0;
    let mut best: Option<Vec<f64>> = None;
    for _ in 0..100 {
        let (z, q, dq) = solve_at(mu)?;
        if q > 1.0 {
            lo = mu;
        } else {
            hi = mu;
            best = Some(z.clone());
        }
        if (q - 1.0).abs() < 1e-10 {
            best = Some(z);
            break;
        }
        let r = 1.0 / q.sqrt() - 1.0;
        let dr = -0.5 * dq / (q * q.sqrt());
        let next = mu - r / dr;
        mu = if next.is_finite() && next > lo && next < hi {
            next
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            (lo * 10.0).max(1e-12)
        };
        if hi.is_finite() && hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let mut z = match best {
        Some(z) => z,
        None => solve_at(hi.min(mu.max(lo)))?.0,
    };
    e.project(&mut z);
    Some(z.iter().zip(x).map(|(a, b)| a - b).collect())
}

fn bfgs_update(h: &mut Mat<f64>, s: &[f64], y: &[f64]) {
    let p = s.len();
    let hs: Vec<f64> = (0..p).map(|i| (0..p).map(|j| h[(i, j)] * s[j]).sum()).collect();
    let shs: f64 = s.iter().zip(&hs).map(|(a, b)| a * b).sum();
    let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
    if !(shs > 0.0) || !shs.is_finite() {
        return;
    }
    // Powell damping keeps the update positive definite.
    let theta = if sy >= 0.2 * shs { 1.0 } else { 0.8 * shs / (shs - sy) };
    let r: Vec<f64> = y.iter().zip(&hs).map(|(yi, hi)| theta * yi + (1.0 - theta) * hi).collect();
    let sr: f64 = s.iter().zip(&r).map(|(a, b)| a * b).sum();
    if !(sr > 0.0) {
        return;
    }
    for i in 0..p {
        for j in 0..p {
            h[(i, j)] += r[i] * r[j] / sr - hs[i] * hs[j] / shs;
        }
    }
}

fn seed_matrix<O: Objective>(obj: &O, x: &[f64], g: &[f64]) -> Mat<f64> {
    let p = x.len();
    match obj.curvature(x) {
        Some(h) if h.nrows() == p && (0..p).all(|i| h[(i, i)].is_finite()) => regularized(&h),
        _ => {
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            Mat::from_fn(p, p, |i, j| if i == j { gn } else { 0.0 })
        }
    }
}

/// Backtracking search along `d` with sufficient decrease measured against
/// the model prediction; `gt` receives the gradient at the accepted point.
fn armijo<O: Objective>(obj: &O, x: &[f64], f: f64, d: &[f64], predicted: f64, gt: &mut [f64]) -> Option<(Vec<f64>, f64, f64)> {
    let mut alpha = 1.0;
    for _ in 0..60 {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        let ft = obj.value_grad(&xt, gt);
        if ft.is_finite() && ft <= f - 1e-4 * alpha * predicted {
            return Some((xt, ft, alpha));
        }
        alpha *= 0.5;
    }
    None
}

pub fn minimize<O: Objective>(obj: &O, x0: &[f64], constraint: Option<&Ellipsoid>, settings: Settings) -> Outcome {
    let p = obj.dim();
    let mut x = x0.to_vec();
    if let Some(e) = constraint {
        e.project(&mut x);
    }
    let mut g = vec![0.0; p];
    let mut f = obj.value_grad(&x, &mut g);
    let mut h = seed_matrix(obj, &x, &g);
    let mut gt = vec![0.0; p];
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iters {
        if projected_gradient_norm(&x, &g, constraint) < settings.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = model_step(&h, &x, &g, constraint);
        // Predicted decrease of the quadratic model. On a curved boundary the
        // chord to the model minimizer can have a non-negative slope while
        // the model still decreases, so steps are judged by the model.
        let predicted = step.as_ref().map(|d| {
            let gd: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            let dhd: f64 = (0..p).map(|i| d[i] * (0..p).map(|j| h[(i, j)] * d[j]).sum::<f64>()).sum();
            -(gd + 0.5 * dhd)
        });
        let noise = 1e-12 * f.abs();
        let accepted = match (step, predicted) {
            (Some(d), Some(pred)) if pred > noise => armijo(obj, &x, f, &d, pred, &mut gt),
            // The decrease is below the resolution of f; judge the full step
            // by the projected gradient instead.
            (Some(d), Some(pred)) if pred.abs() <= noise => {
                let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
                let ft = obj.value_grad(&xt, &mut gt);
                let improves = ft.is_finite()
                    && ft <= f + noise
                    && projected_gradient_norm(&xt, &gt, constraint) < projected_gradient_norm(&x, &g, constraint);
                improves.then_some((xt, ft, 1.0))
            }
            _ => None,
        };
        let Some((xt, ft, alpha)) = accepted else {
            if fresh {
                break;
            }
            h = seed_matrix(obj, &x, &g);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        bfgs_update(&mut h, &s, &y);
        fresh = false;
        let stalled = (f - ft).abs() <= 1e-16 * f.abs().max(1e-300) && alpha < 1e-10;
        x = xt;
        f = ft;
        std::mem::swap(&mut g, &mut gt);
        if stalled {
            break;
        }
    }
    let projected_gradient = projected_gradient_norm(&x, &g, constraint);
    converged = converged || projected_gradient < settings.grad_tol;
    Outcome {
        x,
        value: f,
        iterations,
        projected_gradient,
        converged,
    }
}
