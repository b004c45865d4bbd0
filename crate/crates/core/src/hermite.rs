//! Squared-Hermite (Gallant–Nychka) error distributions.
//!
//! The density is `f(u; tau) = (sum_r tau_r u^r)^2 phi(u) / psi` with
//! `tau_0 = 1`. Expanding the square gives coefficients
//! `gamma_h = sum_r tau_r tau_{h-r}`, so both the normalizing constant and
//! the CDF reduce to standard-normal moments:
//!
//! ```text
//! psi     = sum_h gamma_h a_h,        a_h    = int z^h phi(z) dz
//! F(u)    = sum_h gamma_h A_h(u)/psi, A_h(u) = int_{-inf}^u z^h phi(z) dz
//! ```
//!
//! Both moment sequences follow short recursions, so no numerical
//! integration is ever needed.

use serde::{Deserialize, Serialize};

use crate::error::{KnpError, Result};

/// Largest supported polynomial order; moments up to `z^24` stay well inside
/// double precision.
pub const MAX_ORDER: usize = 12;

/// Beyond this magnitude `phi(u)` underflows and the CDF saturates.
pub const TAIL_CUTOFF: f64 = 38.0;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn std_normal_pdf(u: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * u * u).exp()
}

#[inline]
pub fn std_normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / std::f64::consts::SQRT_2)
}

/// Raw moments `a_0, ..., a_{h_max}` of the standard normal.
pub fn moments_a(h_max: usize) -> Vec<f64> {
    let mut a = vec![0.0; h_max + 1];
    for h in 0..=h_max {
        a[h] = match h {
            0 => 1.0,
            1 => 0.0,
            2 => 1.0,
            _ => (h - 1) as f64 * a[h - 2],
        };
    }
    a
}

/// Partial moments `A_h(u) = int_{-inf}^u z^h phi(z) dz` for `h = 0..=h_max`.
pub fn partial_moments_a(u: f64, h_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; h_max + 1];
    partial_moments_into(u, &mut out);
    out
}

fn partial_moments_into(u: f64, out: &mut [f64]) {
    if u > TAIL_CUTOFF {
        let a = moments_a(out.len() - 1);
        out.copy_from_slice(&a);
        return;
    }
    if u < -TAIL_CUTOFF {
        out.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let phi = std_normal_pdf(u);
    for h in 0..out.len() {
        out[h] = match h {
            0 => std_normal_cdf(u),
            1 => -phi,
            2 => u * out[1] + out[0],
            _ => u * (out[h - 1] - (h - 2) as f64 * out[h - 3]) + (h - 1) as f64 * out[h - 2],
        };
    }
}

/// Member of the squared-Hermite family, stored with `tau_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HermiteRepr", into = "HermiteRepr")]
pub struct HermiteDistribution {
    /// `(tau_0, ..., tau_J)`.
    coeffs: Vec<f64>,
    /// `(gamma_0, ..., gamma_{2J})`.
    gamma: Vec<f64>,
    moments: Vec<f64>,
    psi: f64,
}

#[derive(Serialize, Deserialize)]
struct HermiteRepr {
    tau: Vec<f64>,
}

impl TryFrom<HermiteRepr> for HermiteDistribution {
    type Error = KnpError;
    fn try_from(r: HermiteRepr) -> Result<Self> {
        Self::new(&r.tau)
    }
}

impl From<HermiteDistribution> for HermiteRepr {
    fn from(d: HermiteDistribution) -> Self {
        HermiteRepr { tau: d.tau().to_vec() }
    }
}

/// Work buffers for repeated evaluation without allocation.
#[derive(Debug, Clone)]
pub(crate) struct HermiteScratch {
    partial: Vec<f64>,
}

impl HermiteDistribution {
    /// Builds the distribution from the free coefficients `(tau_1, ..., tau_J)`.
    pub fn new(tau: &[f64]) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(tau.len() + 1);
        coeffs.push(1.0);
        coeffs.extend_from_slice(tau);
        Self::from_coefficients(&coeffs)
    }

    pub fn standard_normal() -> Self {
        Self::new(&[]).expect("order zero is always valid")
    }

    /// Builds the distribution from an unnormalized coefficient vector
    /// `(c_0, ..., c_J)`. The family is invariant to rescaling the vector, and
    /// when `c_0 != 0` the result is the `tau_0 = 1` member `c / c_0`.
    pub fn from_coefficients(coeffs: &[f64]) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(KnpError::InvalidParameter("empty Hermite coefficient vector".into()));
        }
        let order = coeffs.len() - 1;
        if order > MAX_ORDER {
            return Err(KnpError::InvalidParameter(format!(
                "Hermite order {order} exceeds the supported maximum {MAX_ORDER}"
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(KnpError::NonFinite("Hermite coefficients".into()));
        }
        if coeffs.iter().all(|&c| c == 0.0) {
            return Err(KnpError::InvalidParameter("Hermite coefficients are all zero".into()));
        }
        let coeffs = if coeffs[0] != 0.0 {
            coeffs.iter().map(|c| c / coeffs[0]).collect()
        } else {
            coeffs.to_vec()
        };
        let gamma: Vec<f64> = (0..=2 * order)
            .map(|h| {
                let lo = h.saturating_sub(order);
                let hi = h.min(order);
                (lo..=hi).map(|r| coeffs[r] * coeffs[h - r]).sum()
            })
            .collect();
        let moments = moments_a(2 * order);
        let psi = gamma.iter().zip(&moments).map(|(g, a)| g * a).sum();
        Ok(Self {
            coeffs,
            gamma,
            moments,
            psi,
        })
    }

    /// Polynomial order `J`.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Free coefficients `(tau_1, ..., tau_J)`.
    pub fn tau(&self) -> &[f64] {
        &self.coeffs[1..]
    }

    /// Full coefficient vector including the leading coefficient.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub(crate) fn scratch(&self) -> HermiteScratch {
        HermiteScratch {
            partial: vec![0.0; self.gamma.len()],
        }
    }

    fn poly(&self, u: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    pub fn density(&self, u: f64) -> f64 {
        if u.abs() > TAIL_CUTOFF {
            return 0.0;
        }
        let p = self.poly(u);
        p * p * std_normal_pdf(u) / self.psi
    }

    pub fn cdf(&self, u: f64) -> f64 {
        let mut s = self.scratch();
        self.eval(u, None, &mut s).0
    }

    /// Gradient of `F(u; tau)` with respect to `(tau_1, ..., tau_J)`.
    pub fn cdf_grad_tau(&self, u: f64) -> Vec<f64> {
        let mut s = self.scratch();
        let mut g = vec![0.0; self.order()];
        self.eval(u, Some(&mut g), &mut s);
        g
    }

    /// Returns `(F(u), f(u))`, optionally writing `dF/dtau` into `grad`.
    ///
    /// For `u > 0` the CDF is assembled from the upper tail
    /// `int_u^inf z^h phi = (-1)^h A_h(-u)` so that values near one keep full
    /// relative accuracy in the tail.
    pub(crate) fn eval(&self, u: f64, grad: Option<&mut [f64]>, s: &mut HermiteScratch) -> (f64, f64) {
        let order = self.order();
        if !(-TAIL_CUTOFF..=TAIL_CUTOFF).contains(&u) {
            if let Some(g) = grad {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
            return (if u > 0.0 { 1.0 } else { 0.0 }, 0.0);
        }
        let upper = u > 0.0;
        partial_moments_into(if upper { -u } else { u }, &mut s.partial);
        if upper {
            for (h, x) in s.partial.iter_mut().enumerate() {
                if h % 2 == 1 {
                    *x = -*x;
                }
            }
        }
        // `mass` is the lower-tail mass for u <= 0 and the upper-tail mass otherwise.
        let mass: f64 = self.gamma.iter().zip(&s.partial).map(|(g, a)| g * a).sum::<f64>() / self.psi;
        let mass = mass.clamp(0.0, 1.0);
        let cdf = if upper { 1.0 - mass } else { mass };

        if let Some(g) = grad {
            for r in 1..=order {
                let mut d_mass = 0.0;
                let mut d_psi = 0.0;
                for (s_idx, c) in self.coeffs.iter().enumerate() {
                    d_mass += c * s.partial[r + s_idx];
                    d_psi += c * self.moments[r + s_idx];
                }
                let d = 2.0 * (d_mass - mass * d_psi) / self.psi;
                g[r - 1] = if upper { -d } else { d };
            }
        }
        (cdf, self.density(u))
    }

    /// Largest density value over a uniform grid on `[lo, hi]`.
    pub fn density_sup(&self, lo: f64, hi: f64, points: usize) -> f64 {
        let points = points.max(2);
        (0..points)
            .map(|k| self.density(lo + (hi - lo) * k as f64 / (points - 1) as f64))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_moments() {
        assert_eq!(moments_a(2), vec![1.0, 0.0, 1.0]);
        let a = moments_a(8);
        assert_eq!(a[4], 3.0);
        assert_eq!(a[6], 15.0);
        assert_eq!(a[8], 105.0);
        assert!(a.iter().skip(1).step_by(2).all(|&x| x == 0.0));
    }

    #[test]
    fn partial_moments_at_zero_and_upper_tail() {
        let a = partial_moments_a(0.0, 1);
        assert_relative_eq!(a[0], 0.5, epsilon = 1e-16);
        assert_relative_eq!(a[1], -0.398_942_280_401_432_7, epsilon = 1e-16);
        let tail = partial_moments_a(40.0, 4);
        for (x, e) in tail.iter().zip([1.0, 0.0, 1.0, 0.0, 3.0]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!(partial_moments_a(-40.0, 4).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn order_zero_is_standard_normal() {
        let d = HermiteDistribution::standard_normal();
        assert_eq!(d.psi(), 1.0);
        assert_relative_eq!(d.cdf(1.96), 0.975_002_104_851_780, epsilon = 1e-14);
        assert_eq!(d.density(0.3), std_normal_pdf(0.3));
        assert!(d.cdf_grad_tau(0.2).is_empty());
    }

    #[test]
    fn polynomial_root_gives_zero_density() {
        let d = HermiteDistribution::new(&[5.0]).unwrap();
        assert_eq!(d.density(-0.2), 0.0);
    }

    #[test]
    fn density_matches_squared_polynomial() {
        let d = HermiteDistribution::new(&[0.3, -0.1]).unwrap();
        let psi: f64 = 1.0 + 0.09 + 0.01 * 3.0 + 2.0 * (-0.1);
        assert_relative_eq!(d.psi(), psi, epsilon = 1e-15);
        let u: f64 = 0.7;
        let p = 1.0 + 0.3 * u - 0.1 * u * u;
        assert_relative_eq!(d.density(u), p * p * std_normal_pdf(u) / psi, epsilon = 1e-15);
    }

    #[test]
    fn saturation() {
        let d = HermiteDistribution::new(&[0.4, -1.2, 0.3]).unwrap();
        assert_eq!(d.cdf(45.0), 1.0);
        assert_eq!(d.cdf(-45.0), 0.0);
        assert!(d.cdf_grad_tau(40.0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_at_standard_normal_point() {
        let d = HermiteDistribution::new(&[0.0]).unwrap();
        assert_relative_eq!(d.cdf_grad_tau(0.0)[0], -2.0 * std_normal_pdf(0.0), epsilon = 1e-15);
    }

    #[test]
    fn rejects_invalid() {
        assert!(HermiteDistribution::new(&[0.0; 13]).is_err());
        assert!(HermiteDistribution::new(&[f64::INFINITY]).is_err());
        assert!(HermiteDistribution::from_coefficients(&[0.0, 0.0]).is_err());
        assert!(HermiteDistribution::from_coefficients(&[]).is_err());
    }

    #[test]
    fn serde_round_trip_rebuilds_derived_fields() {
        let d = HermiteDistribution::new(&[0.4, 0.2]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"tau":[0.4,0.2]}"#);
        let back: HermiteDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<HermiteDistribution>(r#"{"tau":[1e400]}"#).is_err());
    }
}
