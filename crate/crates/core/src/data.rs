//! Binary-choice samples and covariate standardization.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, KnpError, Result};

pub const MIN_OBSERVATIONS: usize = 10;

/// Observations `(Y_i, V_i, W_i)`: binary outcome, the large-support regressor
/// entering with unit coefficient, and the remaining covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    v: Vec<f64>,
    w: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, v: Vec<f64>, w: Vec<Vec<f64>>) -> Result<Self> {
        let n = y.len();
        check_dim(n, v.len())?;
        check_dim(n, w.len())?;
        if n < MIN_OBSERVATIONS {
            return Err(KnpError::InvalidData(format!(
                "need at least {MIN_OBSERVATIONS} observations, got {n}"
            )));
        }
        let dim = w[0].len();
        if dim == 0 {
            return Err(KnpError::InvalidData("covariate matrix W has no columns".into()));
        }
        for (i, row) in w.iter().enumerate() {
            check_dim(dim, row.len())?;
            if row.iter().any(|x| !x.is_finite()) {
                return Err(KnpError::NonFinite(format!("W row {i}")));
            }
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(KnpError::NonFinite(format!("V row {i}")));
        }
        if let Some(i) = y.iter().position(|&x| x != 0.0 && x != 1.0) {
            return Err(KnpError::InvalidData(format!("Y row {i} is {} (expected 0 or 1)", y[i])));
        }
        if y.iter().all(|&x| x == y[0]) {
            return Err(KnpError::InvalidData("Y is constant".into()));
        }
        Ok(Self { y, v, w })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.w[0].len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w(&self) -> &[Vec<f64>] {
        &self.w
    }

    /// Rows at `idx`, in that order; validation is re-run on the subset.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            idx.iter().map(|&i| self.y[i]).collect(),
            idx.iter().map(|&i| self.v[i]).collect(),
            idx.iter().map(|&i| self.w[i].clone()).collect(),
        )
    }

    /// Same as `subset` but without revalidation (the rows came from a valid set).
    pub(crate) fn subset_unchecked(&self, idx: &[usize]) -> Self {
        Self {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            v: idx.iter().map(|&i| self.v[i]).collect(),
            w: idx.iter().map(|&i| self.w[i].clone()).collect(),
        }
    }

    pub(crate) fn with_w(&self, w: Vec<Vec<f64>>) -> Self {
        Self {
            y: self.y.clone(),
            v: self.v.clone(),
            w,
        }
    }
}

/// Column-wise affine map applied to `W` before any kernel evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Population standard deviation, or 1 for constant columns.
    pub scale: Vec<f64>,
    /// Columns with zero variance; they are centered but not scaled.
    pub degenerate: Vec<bool>,
}

impl Standardization {
    pub fn fit(w: &[Vec<f64>]) -> Self {
        let n = w.len() as f64;
        let dim = w.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        for row in w {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in w {
            for ((s, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let mut scale = Vec::with_capacity(dim);
        let mut degenerate = Vec::with_capacity(dim);
        for (s, m) in var.iter().zip(&mean) {
            let sd = (s / n).sqrt();
            // relative test so that rounding noise on a constant column is not scaled up
            let flat = sd <= 1e-12 * m.abs().max(1.0);
            degenerate.push(flat);
            scale.push(if flat { 1.0 } else { sd });
        }
        Self { mean, scale, degenerate }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            degenerate: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), w.len())?;
        Ok(self.apply_unchecked(w))
    }

    pub(crate) fn apply_unchecked(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| x * s + m)
            .collect())
    }
}

/// Standardizes `W` column-wise; `Y` and `V` are untouched.
pub fn standardize(data: &Dataset) -> (Dataset, Standardization) {
    let record = Standardization::fit(data.w());
    let w = data.w().iter().map(|row| record.apply_unchecked(row)).collect();
    (data.with_w(w), record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(w: Vec<Vec<f64>>) -> Dataset {
        let n = w.len();
        let y = (0..n).map(|i| (i % 2) as f64).collect();
        let v = (0..n).map(|i| i as f64 / n as f64).collect();
        Dataset::new(y, v, w).unwrap()
    }

    #[test]
    fn validation() {
        let w = vec![vec![0.0]; 10];
        assert!(Dataset::new(vec![1.0; 10], vec![0.0; 10], w.clone()).is_err());
        let mut y = vec![0.0; 10];
        y[0] = 1.0;
        assert!(Dataset::new(y.clone(), vec![0.0; 10], w.clone()).is_ok());
        assert!(Dataset::new(y[..9].to_vec(), vec![0.0; 9], w[..9].to_vec()).is_err());
        let mut bad = y.clone();
        bad[1] = 0.5;
        assert!(Dataset::new(bad, vec![0.0; 10], w.clone()).is_err());
        let mut v = vec![0.0; 10];
        v[3] = f64::NAN;
        assert!(matches!(Dataset::new(y.clone(), v, w.clone()), Err(KnpError::NonFinite(_))));
        let mut ragged = w;
        ragged[2] = vec![0.0, 1.0];
        assert!(matches!(
            Dataset::new(y, vec![0.0; 10], ragged),
            Err(KnpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn centering_and_scaling() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![1.0 + (i % 3) as f64, 5.0]).collect();
        let data = toy(rows);
        let (std, rec) = standardize(&data);
        assert_eq!(rec.mean, vec![2.0, 5.0]);
        assert_eq!(rec.degenerate, vec![false, true]);
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((rec.scale[0] - sd).abs() < 1e-15);
        assert!((std.w()[0][0] + 1.0 / sd).abs() < 1e-14);
        assert_eq!(std.w()[1][0], 0.0);
        assert!(std.w().iter().all(|r| r[1] == 0.0));
        assert_eq!(std.y(), data.y());
        assert_eq!(std.v(), data.v());
        let back = rec.invert(&std.w()[4]).unwrap();
        assert!((back[0] - data.w()[4][0]).abs() < 1e-14);
    }

    #[test]
    fn standardization_is_idempotent() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 * 0.37).sin() * 3.0 + 1.0]).collect();
        let (once, _) = standardize(&toy(rows));
        let (twice, rec) = standardize(&once);
        assert!(rec.mean[0].abs() < 1e-15);
        assert!((rec.scale[0] - 1.0).abs() < 1e-14);
        for (a, b) in once.w().iter().zip(twice.w()) {
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }
}
