//! K-fold cross-validation over `(B, J, m)`.

use std::cmp::Ordering;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{KnpError, Result};
use crate::estimator::{fit_prepared, FitConfig, PreparedSample};
use crate::rng;

/// One candidate `(B, J, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningTriple {
    pub radius: f64,
    pub hermite_order: usize,
    pub components: usize,
}

impl TuningTriple {
    pub fn new(radius: f64, hermite_order: usize, components: usize) -> Self {
        Self {
            radius,
            hermite_order,
            components,
        }
    }

    pub fn apply(&self, base: &FitConfig) -> FitConfig {
        FitConfig {
            radius: self.radius,
            hermite_order: self.hermite_order,
            components: self.components,
            ..base.clone()
        }
    }

    /// Simplicity order used to break score ties: smaller `m`, then `J`, then `B`.
    pub fn simplicity_cmp(&self, other: &Self) -> Ordering {
        self.components
            .cmp(&other.components)
            .then(self.hermite_order.cmp(&other.hermite_order))
            .then(self.radius.total_cmp(&other.radius))
    }
}

/// `B in {1, 3, 10, 30}`, `J in {0, 2, 4, 6}`, `m in {10, 25, 50, 100}`, with `m`
/// capped at `max_components` (duplicates after capping removed).
pub fn default_grid(max_components: usize) -> Vec<TuningTriple> {
    let mut ms: Vec<usize> = [10, 25, 50, 100].iter().map(|&m| m.min(max_components).max(1)).collect();
    ms.dedup();
    let mut grid = Vec::new();
    for &radius in &[1.0, 3.0, 10.0, 30.0] {
        for &j in &[0, 2, 4, 6] {
            for &m in &ms {
                grid.push(TuningTriple::new(radius, j, m));
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub grid: Vec<TuningTriple>,
    pub seed: u64,
}

impl CvPlan {
    pub fn new(grid: Vec<TuningTriple>) -> Self {
        Self { folds: 5, grid, seed: 0 }
    }

    pub fn validate(&self, n: usize, base: &FitConfig) -> Result<()> {
        if self.folds < 2 || self.folds > n / 2 {
            return Err(KnpError::InvalidParameter(format!(
                "{} folds for {n} observations (need 2 <= folds <= n/2)",
                self.folds
            )));
        }
        if self.grid.is_empty() {
            return Err(KnpError::InvalidParameter("empty tuning grid".into()));
        }
        let smallest_train = n - n.div_ceil(self.folds);
        for t in &self.grid {
            t.apply(base).validate(smallest_train)?;
        }
        Ok(())
    }
}

/// Fold label of each observation: a seeded permutation dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "cv-folds", 0));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub triple: TuningTriple,
    /// Held-out mean squared error of `p` per fold; `+inf` where the fit failed.
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: TuningTriple,
    /// One row per grid entry, in grid order.
    pub rows: Vec<CvRow>,
}

/// Scores within this relative distance count as tied.
const TIE_TOLERANCE: f64 = 1e-10;

fn better(a: &CvRow, b: &CvRow) -> bool {
    let scale = a.mean.abs().max(b.mean.abs());
    if (a.mean - b.mean).abs() <= TIE_TOLERANCE * scale {
        a.triple.simplicity_cmp(&b.triple) == Ordering::Less
    } else {
        a.mean < b.mean
    }
}

impl CvResult {
    /// Best row among those satisfying `keep`.
    pub fn best_where(&self, keep: impl Fn(&TuningTriple) -> bool) -> Option<TuningTriple> {
        self.rows
            .iter()
            .filter(|r| keep(&r.triple) && r.mean.is_finite())
            .fold(None::<&CvRow>, |acc, r| match acc {
                Some(b) if !better(r, b) => Some(b),
                _ => Some(r),
            })
            .map(|r| r.triple)
    }

    /// Columns `B, J, m, fold_1..fold_k, mean`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let folds = self.rows.first().map_or(0, |r| r.fold_scores.len());
        let mut header = vec!["B".to_string(), "J".into(), "m".into()];
        header.extend((1..=folds).map(|k| format!("fold_{k}")));
        header.push("mean".into());
        writeln!(out, "{}", header.join(","))?;
        for r in &self.rows {
            let mut cells = vec![
                r.triple.radius.to_string(),
                r.triple.hermite_order.to_string(),
                r.triple.components.to_string(),
            ];
            cells.extend(r.fold_scores.iter().map(f64::to_string));
            cells.push(r.mean.to_string());
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Scores every triple by its held-out squared error of `p`, averaged over
/// folds. Standardization and the gram system are rebuilt on each training
/// split. A triple whose fit fails numerically on some fold scores `+inf`.
pub fn cross_validate(data: &Dataset, plan: &CvPlan, base: &FitConfig) -> Result<CvResult> {
    let n = data.len();
    plan.validate(n, base)?;
    let fold = fold_assignment(n, plan.folds, plan.seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..plan.folds)
        .map(|k| ((0..n).filter(|&i| fold[i] != k).collect(), (0..n).filter(|&i| fold[i] == k).collect()))
        .collect();
    let prepared: Vec<(PreparedSample, Dataset)> = splits
        .par_iter()
        .map(|(train, test)| {
            let train = data.subset_unchecked(train);
            let test = data.subset_unchecked(test);
            Ok((PreparedSample::new(&train, base.bandwidth, &base.w_star)?, test))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..plan.grid.len())
        .flat_map(|t| (0..plan.folds).map(move |k| (t, k)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, k)| {
            let (sample, test) = &prepared[k];
            let cfg = plan.grid[t].apply(base);
            match fit_prepared(sample, &cfg) {
                Ok(model) => {
                    let sse: f64 = (0..test.len())
                        .map(|i| {
                            let p = model.predict_p(test.v()[i], &test.w()[i]).expect("dimensions checked");
                            (test.y()[i] - p).powi(2)
                        })
                        .sum();
                    Ok(sse / test.len() as f64)
                }
                Err(e) if e.is_numerical() => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let rows: Vec<CvRow> = plan
        .grid
        .iter()
        .enumerate()
        .map(|(t, triple)| {
            let fold_scores = scores[t * plan.folds..(t + 1) * plan.folds].to_vec();
            let failed = fold_scores.iter().any(|s| !s.is_finite());
            let mean = fold_scores.iter().sum::<f64>() / plan.folds as f64;
            CvRow {
                triple: *triple,
                fold_scores,
                mean,
                failed,
            }
        })
        .collect();
    let mut result = CvResult { best: plan.grid[0], rows };
    result.best = result.best_where(|_| true).ok_or(KnpError::NotConverged {
        restarts: base.optimizer.n_restarts,
        best_objective: f64::INFINITY,
        best_projected_gradient: f64::INFINITY,
        iterations: 0,
    })?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_the_sample() {
        let f = fold_assignment(23, 5, 3);
        let mut counts = [0; 5];
        for k in &f {
            counts[*k] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 23);
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(f, fold_assignment(23, 5, 3));
        assert_ne!(f, fold_assignment(23, 5, 4));
    }

    #[test]
    fn default_grid_caps_components() {
        assert_eq!(default_grid(500).len(), 64);
        let small = default_grid(30);
        assert_eq!(small.len(), 48);
        assert!(small.iter().all(|t| t.components <= 30));
    }

    #[test]
    fn tie_break_prefers_simpler() {
        let a = TuningTriple::new(3.0, 0, 10);
        let b = TuningTriple::new(1.0, 2, 10);
        let c = TuningTriple::new(30.0, 0, 5);
        assert_eq!(c.simplicity_cmp(&a), Ordering::Less);
        assert_eq!(a.simplicity_cmp(&b), Ordering::Less);
        let row = |t, mean| CvRow { triple: t, fold_scores: vec![mean], mean, failed: false };
        let res = CvResult { best: a, rows: vec![row(b, 0.2), row(a, 0.2 * (1.0 + 1e-13)), row(c, 0.3)] };
        assert_eq!(res.best_where(|_| true), Some(a));
        assert_eq!(res.best_where(|t| t.hermite_order > 0), Some(b));
    }
}
