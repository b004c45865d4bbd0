//! Pairs bootstrap with percentile intervals.
//!
//! Each replication resamples rows with replacement, refits with the tuning
//! parameters held fixed, and re-evaluates every target. Tuning parameters
//! are not re-selected inside replications, so intervals understate the
//! variability that comes from cross-validation.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::effects::{ape, conditional_ape, Coordinate, Region};
use crate::error::{KnpError, Result};
use crate::estimator::{fit, FitConfig, KnpModel};
use crate::rng;

/// Largest tolerated share of failed refits.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// Interval output needs at least this many replications.
pub const MIN_REPLICATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSpec {
    pub replications: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            replications: 1000,
            levels: vec![0.90, 0.95],
            seed: 0,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(KnpError::InvalidParameter(format!(
                "need at least {MIN_REPLICATIONS} bootstrap replications, got {}",
                self.replications
            )));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(KnpError::InvalidParameter("confidence levels must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A scalar functional of the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapTarget {
    G { w: Vec<f64> },
    P { v: f64, w: Vec<f64> },
    Ape { coord: Coordinate },
    Cape { coord: Coordinate, region: Region },
}

impl BootstrapTarget {
    /// Evaluates the target; sample averages run over `data`.
    pub fn evaluate(&self, model: &KnpModel, data: &Dataset) -> Result<f64> {
        match self {
            BootstrapTarget::G { w } => model.predict_g(w),
            BootstrapTarget::P { v, w } => model.predict_p(*v, w),
            BootstrapTarget::Ape { coord } => ape(model, data, *coord),
            BootstrapTarget::Cape { coord, region } => conditional_ape(model, data, *coord, region),
        }
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

impl fmt::Display for BootstrapTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BootstrapTarget::G { w } => write!(f, "g({})", join(w)),
            BootstrapTarget::P { v, w } => write!(f, "p({v};{})", join(w)),
            BootstrapTarget::Ape { coord } => write!(f, "ape({coord})"),
            BootstrapTarget::Cape { coord, region } => write!(f, "cape({coord}|{region})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub target: String,
    pub level: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub intervals: Vec<Interval>,
    /// `replicates[t]` holds the successful replications of target `t`, in
    /// replication order.
    pub replicates: Vec<Vec<f64>>,
    pub failed: usize,
    pub total: usize,
}

impl BootstrapResult {
    /// Columns `target, level, estimate, lower, upper, n_effective_reps`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "target,level,estimate,lower,upper,n_effective_reps")?;
        for iv in &self.intervals {
            writeln!(
                out,
                "\"{}\",{},{},{},{},{}",
                iv.target, iv.level, iv.estimate, iv.lower, iv.upper, iv.n_effective
            )?;
        }
        Ok(())
    }
}

/// Order statistics bracketing the central `level` mass of sorted `xs`.
pub fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let r = sorted.len();
    let alpha = 1.0 - level;
    let rank = |q: f64| ((q * r as f64).ceil() as usize).clamp(1, r) - 1;
    (sorted[rank(alpha / 2.0)], sorted[rank(1.0 - alpha / 2.0)])
}

/// Draws row indices for replication `rep`.
pub fn resample_indices(n: usize, seed: u64, rep: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, "bootstrap", rep as u64);
    (0..n).map(|_| r.random_range(0..n)).collect()
}

/// Fits on `data`, then runs `spec.replications` pairs-bootstrap refits.
pub fn bootstrap(
    data: &Dataset,
    cfg: &FitConfig,
    spec: &BootstrapSpec,
    targets: &[BootstrapTarget],
) -> Result<BootstrapResult> {
    let model = fit(data, cfg)?;
    bootstrap_with_model(data, &model, cfg, spec, targets)
}

/// As `bootstrap`, reusing an existing fit on `data` for the point estimates.
pub fn bootstrap_with_model(
    data: &Dataset,
    model: &KnpModel,
    cfg: &FitConfig,
    spec: &BootstrapSpec,
    targets: &[BootstrapTarget],
) -> Result<BootstrapResult> {
    spec.validate()?;
    if targets.is_empty() {
        return Err(KnpError::InvalidParameter("no bootstrap targets".into()));
    }
    let estimates: Vec<f64> = targets.iter().map(|t| t.evaluate(model, data)).collect::<Result<_>>()?;

    let n = data.len();
    let reps: Vec<Option<Vec<f64>>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let sample = data.subset(&resample_indices(n, spec.seed, rep)).ok()?;
            let refit = fit(&sample, cfg).ok()?;
            // a target that cannot be evaluated (e.g. an empty region in this
            // resample) fails the whole replication
            targets.iter().map(|t| t.evaluate(&refit, &sample).ok()).collect()
        })
        .collect();

    let failed = reps.iter().filter(|r| r.is_none()).count();
    let total = spec.replications;
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(KnpError::BootstrapFailures { failed, total });
    }
    let ok: Vec<&Vec<f64>> = reps.iter().flatten().collect();
    let replicates: Vec<Vec<f64>> = (0..targets.len()).map(|t| ok.iter().map(|r| r[t]).collect()).collect();

    let mut intervals = Vec::new();
    for (t, target) in targets.iter().enumerate() {
        let mut sorted = replicates[t].clone();
        sorted.sort_by(f64::total_cmp);
        for &level in &spec.levels {
            let (lower, upper) = percentile_interval(&sorted, level);
            intervals.push(Interval {
                target: target.to_string(),
                level,
                estimate: estimates[t],
                lower,
                upper,
                n_effective: sorted.len(),
            });
        }
    }
    Ok(BootstrapResult {
        intervals,
        replicates,
        failed,
        total,
    })
}
