//! Comparison estimators with a finite-dimensional index.
//!
//! All of them minimize the same least-squares criterion as the kernel
//! estimator. The probit family uses `F = Phi` with a free intercept and a
//! free coefficient on `V`, so `g` is recovered as `c'(phi(w) - phi(w*)) / b`.
//! The semi-nonparametric (SNP) estimator fixes the `V` coefficient at one and
//! estimates `F` in the squared-Hermite family.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, KnpError, Result};
use crate::hermite::HermiteDistribution;
use crate::optim::{minimize, Objective, Settings};

/// Estimators compared in the simulation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "KNP")]
    Knp,
    #[serde(rename = "KPB")]
    Kpb,
    #[serde(rename = "SNP")]
    Snp,
    #[serde(rename = "Probit")]
    Probit,
    #[serde(rename = "P2PB")]
    P2pb,
    #[serde(rename = "P3PB")]
    P3pb,
    #[serde(rename = "P4PB")]
    P4pb,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Knp,
        Method::Kpb,
        Method::Snp,
        Method::Probit,
        Method::P2pb,
        Method::P3pb,
        Method::P4pb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Knp => "KNP",
            Method::Kpb => "KPB",
            Method::Snp => "SNP",
            Method::Probit => "Probit",
            Method::P2pb => "P2PB",
            Method::P3pb => "P3PB",
            Method::P4pb => "P4PB",
        }
    }

    /// Polynomial degree of the probit-family index, if any.
    pub fn probit_degree(self) -> Option<usize> {
        match self {
            Method::Probit => Some(1),
            Method::P2pb => Some(2),
            Method::P3pb => Some(3),
            Method::P4pb => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = KnpError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| KnpError::InvalidParameter(format!("unknown method `{s}`")))
    }
}

/// Exponent vectors of all monomials of total degree `1..=degree` in `dim`
/// variables, ordered by degree.
pub fn monomials(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn extend(prefix: &mut Vec<u32>, var: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if var + 1 == prefix.len() {
            prefix[var] = left;
            out.push(prefix.clone());
            prefix[var] = 0;
            return;
        }
        for e in (0..=left).rev() {
            prefix[var] = e;
            extend(prefix, var + 1, left - e, out);
        }
        prefix[var] = 0;
    }
    let mut out = Vec::new();
    for d in 1..=degree as u32 {
        extend(&mut vec![0; dim], 0, d, &mut out);
    }
    out
}

/// Polynomial features of `w`, each centered at its value at `w*` and scaled
/// by its training standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFeatures {
    exponents: Vec<Vec<u32>>,
    /// Affine map applied to `w` before raising to powers.
    w_center: Vec<f64>,
    w_scale: Vec<f64>,
    origin: Vec<f64>,
    scale: Vec<f64>,
}

impl PolyFeatures {
    pub fn fit(w: &[Vec<f64>], w_star: &[f64], degree: usize) -> Result<Self> {
        let dim = w_star.len();
        let n = w.len() as f64;
        let mut w_center = vec![0.0; dim];
        let mut w_scale = vec![0.0; dim];
        for j in 0..dim {
            let mean = w.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = w.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            w_center[j] = mean;
            w_scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let mut f = Self {
            exponents: monomials(dim, degree),
            w_center,
            w_scale,
            origin: Vec::new(),
            scale: Vec::new(),
        };
        let k = f.exponents.len();
        f.origin = f.raw(w_star);
        f.scale = vec![1.0; k];
        let rows: Vec<Vec<f64>> = w.iter().map(|r| f.raw(r)).collect();
        for c in 0..k {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            if !(var > 0.0) {
                return Err(KnpError::InvalidData(format!("polynomial feature {c} is constant")));
            }
            f.scale[c] = var.sqrt();
        }
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    fn raw(&self, w: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = w
            .iter()
            .zip(self.w_center.iter().zip(&self.w_scale))
            .map(|(x, (c, s))| (x - c) / s)
            .collect();
        self.exponents
            .iter()
            .map(|e| z.iter().zip(e).map(|(x, &p)| x.powi(p as i32)).product())
            .collect()
    }

    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.w_center.len(), w.len())?;
        Ok(self
            .raw(w)
            .iter()
            .zip(self.origin.iter().zip(&self.scale))
            .map(|(x, (o, s))| (x - o) / s)
            .collect())
    }
}

/// Least-squares problem for the index `a + b V + c'x` (free scale) or
/// `V + c'x` (fixed scale) with error CDF from the Hermite family.
struct IndexProblem<'a> {
    y: &'a [f64],
    v: &'a [f64],
    /// Row-major `n x k`.
    x: &'a [f64],
    k: usize,
    free_scale: bool,
    order: usize,
}

impl IndexProblem<'_> {
    fn offset(&self) -> usize {
        if self.free_scale {
            2
        } else {
            0
        }
    }

    /// Per-observation `(index, F, f, dF/dtau)`, visited in order.
    fn visit(&self, p: &[f64], mut each: impl FnMut(usize, f64, f64, &[f64])) -> bool {
        let off = self.offset();
        let (head, tail) = p.split_at(off + self.k);
        let Ok(dist) = HermiteDistribution::new(tail) else {
            return false;
        };
        let (a, b) = if self.free_scale { (head[0], head[1]) } else { (0.0, 1.0) };
        let c = &head[off..];
        let mut s = dist.scratch();
        let mut dtau = vec![0.0; self.order];
        for i in 0..self.y.len() {
            let row = &self.x[i * self.k..(i + 1) * self.k];
            let u = a + b * self.v[i] + row.iter().zip(c).map(|(r, c)| r * c).sum::<f64>();
            let (cdf, pdf) = dist.eval(u, Some(&mut dtau), &mut s);
            each(i, cdf, pdf, &dtau);
        }
        true
    }

    /// Derivative of the index wrapped through `F`, scaled by `pdf`, written into `row`.
    fn jacobian_row(&self, i: usize, pdf: f64, dtau: &[f64], row: &mut [f64]) {
        let off = self.offset();
        if self.free_scale {
            row[0] = pdf;
            row[1] = pdf * self.v[i];
        }
        for (r, x) in row[off..off + self.k].iter_mut().zip(&self.x[i * self.k..(i + 1) * self.k]) {
            *r = pdf * x;
        }
        row[off + self.k..].copy_from_slice(dtau);
    }
}

impl Objective for IndexProblem<'_> {
    fn dim(&self) -> usize {
        self.offset() + self.k + self.order
    }

    fn value_grad(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.y.len() as f64;
        let mut row = vec![0.0; grad.len()];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        let ok = self.visit(p, |i, cdf, pdf, dtau| {
            let r = self.y[i] - cdf;
            total += r * r;
            self.jacobian_row(i, pdf, dtau, &mut row);
            let w = -2.0 * r / n;
            for (g, d) in grad.iter_mut().zip(&row) {
                *g += w * d;
            }
        });
        if ok {
            total / n
        } else {
            f64::INFINITY
        }
    }

    fn curvature(&self, p: &[f64]) -> Option<Mat<f64>> {
        let dim = self.dim();
        let n = self.y.len() as f64;
        let mut h = Mat::<f64>::zeros(dim, dim);
        let mut row = vec![0.0; dim];
        let ok = self.visit(p, |i, _, pdf, dtau| {
            self.jacobian_row(i, pdf, dtau, &mut row);
            for a in 0..dim {
                if row[a] == 0.0 {
                    continue;
                }
                for b in a..dim {
                    h[(a, b)] += row[a] * row[b];
                }
            }
        });
        if !ok {
            return None;
        }
        for a in 0..dim {
            for b in a..dim {
                let v = 2.0 * h[(a, b)] / n;
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        Some(h)
    }
}

/// A fitted finite-dimensional index model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexModel {
    features: PolyFeatures,
    free_scale: bool,
    intercept: f64,
    v_coef: f64,
    coef: Vec<f64>,
    dist: HermiteDistribution,
    objective: f64,
}

impl IndexModel {
    /// Probit with a polynomial index of the given degree (degree one is the
    /// plain probit).
    pub fn probit(data: &Dataset, w_star: &[f64], degree: usize, settings: Settings) -> Result<Self> {
        Self::fit(data, w_star, degree, true, 0, settings)
    }

    /// Linear index with the `V` coefficient fixed at one and a Hermite error
    /// of the given order.
    pub fn snp(data: &Dataset, w_star: &[f64], order: usize, settings: Settings) -> Result<Self> {
        Self::fit(data, w_star, 1, false, order, settings)
    }

    fn fit(
        data: &Dataset,
        w_star: &[f64],
        degree: usize,
        free_scale: bool,
        order: usize,
        settings: Settings,
    ) -> Result<Self> {
        check_dim(data.dim(), w_star.len())?;
        let features = PolyFeatures::fit(data.w(), w_star, degree)?;
        let k = features.len();
        let mut x = Vec::with_capacity(data.len() * k);
        for w in data.w() {
            x.extend(features.apply(w)?);
        }
        let problem = IndexProblem {
            y: data.y(),
            v: data.v(),
            x: &x,
            k,
            free_scale,
            order,
        };
        let mut x0 = vec![0.0; problem.dim()];
        if free_scale {
            x0[1] = 1.0;
        }
        let out = minimize(&problem, &x0, None, settings);
        if !out.converged || !out.value.is_finite() {
            return Err(KnpError::NotConverged {
                restarts: 1,
                best_objective: out.value,
                best_projected_gradient: out.projected_gradient,
                iterations: out.iterations,
            });
        }
        let off = problem.offset();
        let (intercept, v_coef) = if free_scale { (out.x[0], out.x[1]) } else { (0.0, 1.0) };
        if !(v_coef > 0.0) {
            return Err(KnpError::NonFinite(format!("non-positive coefficient on V ({v_coef})")));
        }
        Ok(Self {
            features,
            free_scale,
            intercept,
            v_coef,
            coef: out.x[off..off + k].to_vec(),
            dist: HermiteDistribution::new(&out.x[off + k..])?,
            objective: out.value,
        })
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn dist(&self) -> &HermiteDistribution {
        &self.dist
    }

    pub fn v_coef(&self) -> f64 {
        self.v_coef
    }

    fn linear(&self, w: &[f64]) -> Result<f64> {
        Ok(self.features.apply(w)?.iter().zip(&self.coef).map(|(x, c)| x * c).sum())
    }

    /// Estimated `g(w)`, normalized to vanish at `w*` and to unit `V` coefficient.
    pub fn predict_g(&self, w: &[f64]) -> Result<f64> {
        Ok(self.linear(w)? / self.v_coef)
    }

    pub fn predict_p(&self, v: f64, w: &[f64]) -> Result<f64> {
        Ok(self.dist.cdf(self.intercept + self.v_coef * v + self.linear(w)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        let binom = |n: usize, k: usize| (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1));
        for degree in 1..=4 {
            assert_eq!(monomials(1, degree).len(), degree);
            assert_eq!(monomials(10, degree).len(), binom(10 + degree, degree) - 1);
        }
        assert_eq!(monomials(2, 2), vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("p3pb".parse::<Method>().unwrap(), Method::P3pb);
        assert!("logit".parse::<Method>().is_err());
    }

    #[test]
    fn features_vanish_at_w_star() {
        let w: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 7.0, (i % 3) as f64]).collect();
        let f = PolyFeatures::fit(&w, &[0.5, 1.0], 3).unwrap();
        assert!(f.apply(&[0.5, 1.0]).unwrap().iter().all(|x| x.abs() < 1e-14));
    }
}
