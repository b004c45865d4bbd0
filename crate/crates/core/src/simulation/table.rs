//! Replicated comparisons scored against the held-out truth.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{IndexModel, Method};
use super::design::{generate, SimDesign, SimSample, Split};
use crate::data::Dataset;
use crate::error::{KnpError, Result};
use crate::estimator::{fit_prepared, FitConfig, KnpModel, OptimizerConfig, PreparedSample, WStarPolicy};
use crate::optim::Settings;
use crate::rng::derive_seed;
use crate::selection::{cross_validate, fold_assignment, CvPlan, TuningTriple};

/// Settings shared by every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub methods: Vec<Method>,
    /// Cross-validation grid for the kernel estimators; the restricted
    /// estimator picks the best `J = 0` row of the same run.
    pub grid: Vec<TuningTriple>,
    pub folds: usize,
    /// Candidate Hermite orders for the SNP estimator, chosen by the same folds.
    pub snp_orders: Vec<usize>,
    pub bandwidth: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            grid: desk_grid(),
            folds: 5,
            snp_orders: vec![0, 2, 4, 6],
            bandwidth: 1.0,
            optimizer: OptimizerConfig {
                n_restarts: 3,
                ..OptimizerConfig::default()
            },
        }
    }
}

/// `B in {10, 30}`, `J in {0, 2, 4, 6}`, `m = 25`.
pub fn desk_grid() -> Vec<TuningTriple> {
    let mut grid = Vec::new();
    for &radius in &[10.0, 30.0] {
        for &j in &[0, 2, 4, 6] {
            grid.push(TuningTriple::new(radius, j, 25));
        }
    }
    grid
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(KnpError::InvalidParameter("no methods selected".into()));
        }
        if self.methods.contains(&Method::Kpb) && !self.grid.iter().any(|t| t.hermite_order == 0) {
            return Err(KnpError::InvalidParameter("KPB needs J = 0 rows in the grid".into()));
        }
        if self.methods.contains(&Method::Snp) && self.snp_orders.is_empty() {
            return Err(KnpError::InvalidParameter("SNP needs at least one Hermite order".into()));
        }
        Ok(())
    }

    fn settings(&self) -> Settings {
        Settings {
            max_iters: self.optimizer.max_iters,
            grad_tol: self.optimizer.grad_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub rmse_g: f64,
    pub mad_g: f64,
    pub rmse_p: f64,
    pub mad_p: f64,
}

impl RepMetrics {
    fn mean(all: &[RepMetrics]) -> Option<Self> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let avg = |f: fn(&RepMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Some(Self {
            rmse_g: avg(|m| m.rmse_g),
            mad_g: avg(|m| m.mad_g),
            rmse_p: avg(|m| m.rmse_p),
            mad_p: avg(|m| m.mad_p),
        })
    }
}

fn rmse_mad(est: &[f64], truth: &[f64]) -> (f64, f64) {
    let n = truth.len() as f64;
    let (sq, abs) = est
        .iter()
        .zip(truth)
        .fold((0.0, 0.0), |(s, a), (e, t)| (s + (e - t) * (e - t), a + (e - t).abs()));
    ((sq / n).sqrt(), abs / n)
}

/// RMSE and MAD of fitted `g` and `p` on a sample with known truth.
pub fn score(
    test: &SimSample,
    g: impl Fn(&[f64]) -> Result<f64>,
    p: impl Fn(f64, &[f64]) -> Result<f64>,
) -> Result<RepMetrics> {
    let data = &test.data;
    let g_hat: Vec<f64> = data.w().iter().map(|w| g(w)).collect::<Result<_>>()?;
    let p_hat: Vec<f64> = data.v().iter().zip(data.w()).map(|(v, w)| p(*v, w)).collect::<Result<_>>()?;
    let (rmse_g, mad_g) = rmse_mad(&g_hat, &test.g0);
    let (rmse_p, mad_p) = rmse_mad(&p_hat, &test.p0);
    Ok(RepMetrics {
        rmse_g,
        mad_g,
        rmse_p,
        mad_p,
    })
}

/// Outcome of one method on one replication. Failed fits carry the error
/// message and are left out of the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub metrics: Option<RepMetrics>,
    /// Selected tuning, e.g. `B=30 J=4 m=25`.
    pub tuning: Option<String>,
    /// Selected kernel triple for KNP and KPB.
    pub triple: Option<TuningTriple>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub replications: Vec<RepOutcome>,
    pub mean: Option<RepMetrics>,
    pub failures: usize,
}

impl MethodResult {
    pub fn from_outcomes(method: Method, replications: Vec<RepOutcome>) -> Self {
        let ok: Vec<RepMetrics> = replications.iter().filter_map(|r| r.metrics).collect();
        Self {
            method,
            failures: replications.len() - ok.len(),
            mean: RepMetrics::mean(&ok),
            replications,
        }
    }

    /// Per-replication values of one metric, `None` where the fit failed.
    pub fn series(&self, metric: fn(&RepMetrics) -> f64) -> Vec<Option<f64>> {
        self.replications.iter().map(|r| r.metrics.as_ref().map(metric)).collect()
    }
}

fn describe(t: &TuningTriple) -> String {
    format!("B={} J={} m={}", t.radius, t.hermite_order, t.components)
}

type Fitted = (RepMetrics, Option<String>, Option<TuningTriple>);

fn outcome(rep: usize, r: Result<Fitted>) -> RepOutcome {
    match r {
        Ok((m, tuning, triple)) => RepOutcome {
            rep,
            metrics: Some(m),
            tuning,
            triple,
            error: None,
        },
        Err(e) => RepOutcome {
            rep,
            metrics: None,
            tuning: None,
            triple: None,
            error: Some(e.to_string()),
        },
    }
}

/// Held-out squared error of `p` for each SNP order, averaged over folds.
fn snp_order(train: &Dataset, w_star: &[f64], cfg: &SimConfig, seed: u64) -> Result<usize> {
    let n = train.len();
    let fold = fold_assignment(n, cfg.folds, seed);
    let mut best = None::<(f64, usize)>;
    for &order in &cfg.snp_orders {
        let mut total = 0.0;
        for k in 0..cfg.folds {
            let tr: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
            let te: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
            let (tr, te) = (train.subset_unchecked(&tr), train.subset_unchecked(&te));
            total += match IndexModel::snp(&tr, w_star, order, cfg.settings()) {
                Ok(model) => {
                    let mut sse = 0.0;
                    for i in 0..te.len() {
                        sse += (te.y()[i] - model.predict_p(te.v()[i], &te.w()[i])?).powi(2);
                    }
                    sse / te.len() as f64
                }
                Err(e) if e.is_numerical() => f64::INFINITY,
                Err(e) => return Err(e),
            };
        }
        let mean = total / cfg.folds as f64;
        if mean.is_finite() && best.is_none_or(|(b, _)| mean < b) {
            best = Some((mean, order));
        }
    }
    best.map(|(_, o)| o).ok_or(KnpError::NotConverged {
        restarts: 1,
        best_objective: f64::INFINITY,
        best_projected_gradient: f64::INFINITY,
        iterations: 0,
    })
}

/// Fit settings shared by every kernel fit on replication `rep`.
fn kernel_base(design: &SimDesign, rep: usize, cfg: &SimConfig) -> FitConfig {
    FitConfig {
        bandwidth: cfg.bandwidth,
        w_star: WStarPolicy::Point(design.w_star()),
        optimizer: cfg.optimizer,
        seed: derive_seed(design.seed, &format!("restarts-{}", design.label()), rep as u64),
        ..FitConfig::default()
    }
}

/// Rebuilds the kernel models of replication `rep` at the given triples,
/// exactly as `run_replication` fits them after cross-validation.
pub fn refit_kernel(design: &SimDesign, rep: usize, cfg: &SimConfig, triples: &[TuningTriple]) -> Result<Vec<KnpModel>> {
    let train = generate(design, Split::Train, rep)?;
    let base = kernel_base(design, rep, cfg);
    let sample = PreparedSample::new(&train.data, cfg.bandwidth, &base.w_star)?;
    triples.iter().map(|t| fit_prepared(&sample, &t.apply(&base))).collect()
}

/// Fits every configured method on replication `rep` of `design` and scores
/// it on the matching test sample.
pub fn run_replication(design: &SimDesign, rep: usize, cfg: &SimConfig) -> Result<Vec<(Method, RepOutcome)>> {
    cfg.validate()?;
    let train = generate(design, Split::Train, rep)?;
    let test = generate(design, Split::Test, rep)?;
    let w_star = design.w_star();
    let label = design.label();
    let cv_seed = derive_seed(design.seed, &format!("cv-{label}"), rep as u64);
    let settings = cfg.settings();

    let wants_kernel = cfg.methods.iter().any(|m| matches!(m, Method::Knp | Method::Kpb));
    let kernel = if wants_kernel {
        let base = kernel_base(design, rep, cfg);
        let plan = CvPlan {
            folds: cfg.folds,
            grid: cfg.grid.clone(),
            seed: cv_seed,
        };
        let cv = cross_validate(&train.data, &plan, &base);
        let sample = PreparedSample::new(&train.data, cfg.bandwidth, &base.w_star)?;
        Some((base, cv, sample))
    } else {
        None
    };

    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let result: Result<Fitted> = match method {
            Method::Knp | Method::Kpb => {
                let (base, cv, sample) = kernel.as_ref().expect("prepared above");
                (|| {
                    let cv = cv
                        .as_ref()
                        .map_err(|e| KnpError::InvalidParameter(format!("cross-validation failed: {e}")))?;
                    let triple = if method == Method::Knp {
                        cv.best
                    } else {
                        cv.best_where(|t| t.hermite_order == 0)
                            .ok_or_else(|| KnpError::InvalidParameter("no usable J = 0 row".into()))?
                    };
                    let model = fit_prepared(sample, &triple.apply(base))?;
                    let m = score(&test, |w| model.predict_g(w), |v, w| model.predict_p(v, w))?;
                    Ok((m, Some(describe(&triple)), Some(triple)))
                })()
            }
            Method::Snp => (|| {
                let order = snp_order(&train.data, &w_star, cfg, cv_seed)?;
                let model = IndexModel::snp(&train.data, &w_star, order, settings)?;
                let m = score(&test, |w| model.predict_g(w), |v, w| model.predict_p(v, w))?;
                Ok((m, Some(format!("J={order}")), None))
            })(),
            _ => (|| {
                let degree = method.probit_degree().expect("probit family");
                let model = IndexModel::probit(&train.data, &w_star, degree, settings)?;
                let m = score(&test, |w| model.predict_g(w), |v, w| model.predict_p(v, w))?;
                Ok((m, None, None))
            })(),
        };
        out.push((method, outcome(rep, result)));
    }
    Ok(out)
}

/// All replications of one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTable {
    pub design: SimDesign,
    pub methods: Vec<MethodResult>,
    pub seconds: f64,
}

impl DesignTable {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Runs `design.nsim` replications in parallel and aggregates them in
/// replication order.
pub fn replicate_design(design: &SimDesign, cfg: &SimConfig) -> Result<DesignTable> {
    cfg.validate()?;
    let start = Instant::now();
    let reps: Vec<Vec<(Method, RepOutcome)>> = (0..design.nsim)
        .into_par_iter()
        .map(|rep| run_replication(design, rep, cfg))
        .collect::<Result<_>>()?;
    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, &m)| MethodResult::from_outcomes(m, reps.iter().map(|r| r[k].1.clone()).collect()))
        .collect();
    Ok(DesignTable {
        design: design.clone(),
        methods,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTable {
    pub designs: Vec<DesignTable>,
}

const METRICS: [(&str, fn(&RepMetrics) -> f64); 4] = [
    ("RMSE(g)", |m| m.rmse_g),
    ("MAD(g)", |m| m.mad_g),
    ("RMSE(p)", |m| m.rmse_p),
    ("MAD(p)", |m| m.mad_p),
];

pub fn replicate_table(designs: &[SimDesign], cfg: &SimConfig) -> Result<SimTable> {
    Ok(SimTable {
        designs: designs.iter().map(|d| replicate_design(d, cfg)).collect::<Result<_>>()?,
    })
}

impl SimTable {
    /// One block of metric rows per design, one column per method. Methods
    /// with no successful replication are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let methods: Vec<Method> = self.designs.first().map_or(vec![], |d| d.methods.iter().map(|r| r.method).collect());
        let names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
        writeln!(out, "design,metric,{}", names.join(","))?;
        for d in &self.designs {
            for (name, f) in METRICS {
                let cells: Vec<String> = d
                    .methods
                    .iter()
                    .map(|r| r.mean.as_ref().map_or(String::new(), |m| format!("{:.6}", f(m))))
                    .collect();
                writeln!(out, "{},{name},{}", d.design.label(), cells.join(","))?;
            }
        }
        Ok(())
    }

    /// Long format: one row per design, replication and method.
    pub fn write_replications_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "design,rep,method,rmse_g,mad_g,rmse_p,mad_p,tuning,error")?;
        for d in &self.designs {
            for r in &d.methods {
                for o in &r.replications {
                    let m = o.metrics.map_or(vec![String::new(); 4], |m| {
                        [m.rmse_g, m.mad_g, m.rmse_p, m.mad_p].iter().map(f64::to_string).collect()
                    });
                    writeln!(
                        out,
                        "{},{},{},{},\"{}\",\"{}\"",
                        d.design.label(),
                        o.rep,
                        r.method,
                        m.join(","),
                        o.tuning.as_deref().unwrap_or(""),
                        o.error.as_deref().unwrap_or("").replace('"', "'"),
                    )?;
                }
            }
        }
        Ok(())
    }

    pub fn metadata(&self, cfg: &SimConfig) -> SimMetadata {
        SimMetadata {
            config: cfg.clone(),
            designs: self
                .designs
                .iter()
                .map(|d| DesignMetadata {
                    label: d.design.label(),
                    seed: d.design.seed,
                    nsim: d.design.nsim,
                    ntrain: d.design.ntrain,
                    ntest: d.design.ntest,
                    seconds: d.seconds,
                    failures: d.methods.iter().map(|r| (r.method.name().to_string(), r.failures)).collect(),
                    notes: notes(&d.design),
                })
                .collect(),
        }
    }
}

fn notes(design: &SimDesign) -> Vec<String> {
    let mut notes = Vec::new();
    let reference = if design.dim() == 1 { 10_000 } else { 1_000_000 };
    if design.ntest < reference {
        notes.push(format!("test sample reduced from {reference} to {} rows", design.ntest));
    }
    if design.nsim < 1000 {
        notes.push(format!("{} replications instead of 1000", design.nsim));
    }
    notes
}

/// Run description written next to the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub config: SimConfig,
    pub designs: Vec<DesignMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMetadata {
    pub label: String,
    pub seed: u64,
    pub nsim: usize,
    pub ntrain: usize,
    pub ntest: usize,
    pub seconds: f64,
    pub failures: Vec<(String, usize)>,
    pub notes: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_zero() {
        let design: SimDesign = "IA".parse().unwrap();
        let test = generate(&SimDesign { ntest: 200, ..design.clone() }, Split::Test, 0).unwrap();
        let m = score(&test, |w| Ok(design.systematic.g0(w)), |v, w| Ok(design.p0(v, w))).unwrap();
        assert!(m.rmse_g.abs() < 1e-15 && m.mad_g.abs() < 1e-15);
        assert!(m.rmse_p.abs() < 1e-15 && m.mad_p.abs() < 1e-15);
    }

    #[test]
    fn rmse_dominates_mad() {
        let (r, m) = rmse_mad(&[1.0, -2.0, 0.5], &[0.0, 0.0, 0.0]);
        assert!(r >= m);
        assert!((m - 3.5 / 3.0).abs() < 1e-15);
    }
}
