//! Gaussian kernel, gram matrices over augmented centers and spectral truncation.
//!
//! The gram system always carries the normalization point `w*` as center 0,
//! followed by the observed covariate rows. Its eigenpairs are stored in
//! descending eigenvalue order, ties broken by the original index, so that
//! truncation is deterministic.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, KnpError, Result};
use crate::linalg;

/// Eigenvalues at or below this fraction of the leading eigenvalue are
/// treated as numerically zero and never inverted.
pub const RELATIVE_EIGEN_FLOOR: f64 = 1e-12;

/// Gaussian kernel `k(u, v) = exp(-|u - v|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { bandwidth: 1.0 }
    }
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(KnpError::InvalidParameter(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_dim(u.len(), v.len())?;
        Ok(self.eval_unchecked(u, v))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Gradient of `k(center, w)` with respect to `w`.
    pub fn grad(&self, center: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_dim(center.len(), w.len())?;
        let mut out = vec![0.0; w.len()];
        self.grad_into(center, w, 1.0, &mut out);
        Ok(out)
    }

    /// Adds `weight * d k(center, w) / dw` to `out`.
    #[inline]
    pub(crate) fn grad_into(&self, center: &[f64], w: &[f64], weight: f64, out: &mut [f64]) {
        let s2 = self.bandwidth * self.bandwidth;
        let k = self.eval_unchecked(center, w);
        for ((o, c), x) in out.iter_mut().zip(center).zip(w) {
            *o -= weight * (x - c) / s2 * k;
        }
    }
}

/// Gram matrix over `[w*, W_1, ..., W_n]` with its full symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct GramSystem {
    kernel: KernelSpec,
    centers: Vec<Vec<f64>>,
    matrix: Mat<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<f64>,
    min_raw_eigenvalue: f64,
}

pub fn build_gram(kernel: &KernelSpec, w_star: &[f64], points: &[Vec<f64>]) -> Result<GramSystem> {
    if points.is_empty() {
        return Err(KnpError::InvalidData("gram matrix needs at least one point".into()));
    }
    let dim = w_star.len();
    let mut centers = Vec::with_capacity(points.len() + 1);
    centers.push(w_star.to_vec());
    centers.extend(points.iter().cloned());
    for (i, c) in centers.iter().enumerate() {
        check_dim(dim, c.len())?;
        if c.iter().any(|x| !x.is_finite()) {
            return Err(KnpError::NonFinite(format!("gram center {i}")));
        }
    }

    let size = centers.len();
    // Row-parallel fill; each entry is a pure function of its two centers.
    let rows: Vec<Vec<f64>> = (0..size)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| kernel.eval_unchecked(&centers[i], &centers[j])).collect())
        .collect();
    let matrix = Mat::from_fn(size, size, |i, j| if j <= i { rows[i][j] } else { rows[j][i] });

    let (raw, u) = linalg::symmetric_eigen(&matrix).ok_or(KnpError::Eigendecomposition)?;

    let mut order: Vec<usize> = (0..size).collect();
    // Stable sort on descending eigenvalue keeps index order among ties.
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
    let min_raw_eigenvalue = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let eigenvalues: Vec<f64> = order.iter().map(|&k| raw[k].max(0.0)).collect();
    let mut eigenvectors = Mat::from_fn(size, size, |i, j| u[(i, order[j])]);
    for j in 0..size {
        orient_column(&mut eigenvectors, j);
    }

    Ok(GramSystem {
        kernel: *kernel,
        centers,
        matrix,
        eigenvalues,
        eigenvectors,
        min_raw_eigenvalue,
    })
}

/// Eigenvector signs are arbitrary; fix them so the entry sum is positive,
/// falling back to the sign of the `w*` entry for zero-sum vectors.
fn orient_column(m: &mut Mat<f64>, j: usize) {
    let n = m.nrows();
    let sum: f64 = (0..n).map(|i| m[(i, j)]).sum();
    let flip = if sum.abs() > 1e-8 { sum < 0.0 } else { m[(0, j)] < 0.0 };
    if flip {
        for i in 0..n {
            m[(i, j)] = -m[(i, j)];
        }
    }
}

/// Leading-`m` spectral truncation of a gram system.
#[derive(Debug, Clone)]
pub struct Truncation {
    /// `(n+1) x m` matrix of leading eigenvectors.
    pub basis: Mat<f64>,
    /// The `m` leading eigenvalues, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Number of leading columns whose eigenvalue clears the relative floor;
    /// only these enter the optimization problem and `Lambda_m^{-1}`.
    pub effective: usize,
    /// First eigenvalue left out of the `m` retained ones (0 when `m = n+1`).
    pub residual: f64,
}

impl Truncation {
    pub fn requested(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Largest eigenvalue not used by the optimization, counting the
    /// retained-but-floored columns.
    pub fn effective_residual(&self) -> f64 {
        if self.effective < self.eigenvalues.len() {
            self.eigenvalues[self.effective].max(self.residual)
        } else {
            self.residual
        }
    }

    /// `U_m Lambda_m U_m'`.
    pub fn reconstruct(&self) -> Mat<f64> {
        let scaled = Mat::from_fn(self.basis.nrows(), self.basis.ncols(), |i, j| {
            self.basis[(i, j)] * self.eigenvalues[j]
        });
        linalg::mul_transpose(&scaled, &self.basis)
    }
}

impl GramSystem {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// `[w*, W_1, ..., W_n]`.
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn size(&self) -> usize {
        self.centers.len()
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    /// Descending, clamped at zero.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Mat<f64> {
        &self.eigenvectors
    }

    /// Smallest eigenvalue before clamping; slightly negative values are round-off.
    pub fn min_raw_eigenvalue(&self) -> f64 {
        self.min_raw_eigenvalue
    }

    /// Number of eigenvalues strictly above `RELATIVE_EIGEN_FLOOR * lambda_0`.
    pub fn effective_rank(&self) -> usize {
        let floor = RELATIVE_EIGEN_FLOOR * self.eigenvalues[0];
        self.eigenvalues.iter().take_while(|&&l| l > floor).count()
    }

    pub fn truncate(&self, m: usize) -> Result<Truncation> {
        let size = self.size();
        if m == 0 || m > size {
            return Err(KnpError::TruncationOutOfRange { requested: m, max: size });
        }
        let basis = self.eigenvectors.subcols(0, m).to_owned();
        let eigenvalues = self.eigenvalues[..m].to_vec();
        let residual = if m < size { self.eigenvalues[m] } else { 0.0 };
        let effective = self.effective_rank().min(m);
        Ok(Truncation {
            basis,
            eigenvalues,
            effective,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_values() {
        let k = KernelSpec::default();
        assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(k.eval(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        let k2 = KernelSpec::new(2.0).unwrap();
        assert_relative_eq!(k2.eval(&[3.0], &[1.0]).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        assert!(KernelSpec::new(0.0).is_err());
        assert!(KernelSpec::new(f64::NAN).is_err());
        let k = KernelSpec::default();
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(KnpError::DimensionMismatch { .. })));
        assert!(k.grad(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn gradient_at_peak_is_zero() {
        let k = KernelSpec::default();
        assert_eq!(k.grad(&[0.0], &[0.0]).unwrap(), vec![0.0]);
        assert_relative_eq!(k.grad(&[0.0], &[1.0]).unwrap()[0], -(-0.5f64).exp(), epsilon = 1e-15);
        let g = KernelSpec::new(2.0).unwrap().grad(&[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert_relative_eq!(g[1], -0.25 * (-0.125f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn duplicated_point_is_rank_one() {
        let g = build_gram(&KernelSpec::default(), &[0.0], &[vec![0.0]]).unwrap();
        assert_relative_eq!(g.eigenvalues()[0], 2.0, epsilon = 1e-14);
        assert!(g.eigenvalues()[1].abs() < 1e-14);
        assert_eq!(g.effective_rank(), 1);
        let t = g.truncate(1).unwrap();
        let r = t.reconstruct();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(r[(i, j)], 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn distant_points_decorrelate() {
        let g = build_gram(&KernelSpec::default(), &[0.0], &[vec![10.0]]).unwrap();
        assert_relative_eq!(g.eigenvalues()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(g.eigenvalues()[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn truncate_range_checked() {
        let g = build_gram(&KernelSpec::default(), &[0.0], &[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(g.truncate(0), Err(KnpError::TruncationOutOfRange { .. })));
        assert!(matches!(g.truncate(4), Err(KnpError::TruncationOutOfRange { .. })));
        assert_eq!(g.truncate(3).unwrap().residual, 0.0);
    }

    #[test]
    fn non_finite_centers_rejected() {
        let r = build_gram(&KernelSpec::default(), &[0.0], &[vec![f64::NAN]]);
        assert!(matches!(r, Err(KnpError::NonFinite(_))));
    }
}
