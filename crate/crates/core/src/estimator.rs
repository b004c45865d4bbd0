//! The kernelized nonparametric estimator.
//!
//! With centers `[w*, W_1, ..., W_n]`, gram matrix `K` and its leading
//! eigenpairs `(U_m, Lambda_m)`, the fitted index is
//! `V_i + [U_m zeta]_{i+1} - [U_m zeta]_1` and the error CDF is a
//! squared-Hermite `F(.; tau)`. The estimator minimizes the mean squared
//! residual `(Y_i - F(index_i; tau))^2` over
//! `{zeta : zeta' Lambda_m^{-1} zeta <= B^2} x R^J`, then maps back to kernel
//! coefficients `delta = U_m Lambda_m^{-1} zeta`.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, Dataset, Standardization};
use crate::error::{check_dim, KnpError, Result};
use crate::hermite::{HermiteDistribution, MAX_ORDER};
use crate::kernel::{build_gram, GramSystem, KernelSpec, Truncation};
use crate::optim::{minimize, Ellipsoid, Objective, Settings};
use crate::rng;

/// Where the location normalization `g(w*) = 0` is imposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WStarPolicy {
    /// The sample mean of `W`, i.e. zero after centering.
    #[default]
    Centered,
    /// A user-supplied point on the raw covariate scale.
    Point(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub n_restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-7,
            n_restarts: 5,
        }
    }
}

/// Tuning parameters and solver settings for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// RKHS ball radius `B`.
    pub radius: f64,
    /// Hermite polynomial order `J`.
    pub hermite_order: usize,
    /// Retained eigenvectors `m`.
    pub components: usize,
    pub bandwidth: f64,
    pub w_star: WStarPolicy,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Reject `m` above the effective rank instead of silently dropping the
    /// numerically null directions.
    pub strict_rank: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            radius: 10.0,
            hermite_order: 2,
            components: 25,
            bandwidth: 1.0,
            w_star: WStarPolicy::Centered,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            strict_rank: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(KnpError::InvalidParameter(msg));
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad(format!("radius B must be positive, got {}", self.radius));
        }
        if self.hermite_order > MAX_ORDER {
            return bad(format!("Hermite order {} exceeds {MAX_ORDER}", self.hermite_order));
        }
        if self.components == 0 || self.components > n + 1 {
            return Err(KnpError::TruncationOutOfRange {
                requested: self.components,
                max: n + 1,
            });
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        if self.optimizer.n_restarts == 0 || self.optimizer.max_iters == 0 {
            return bad("optimizer needs at least one restart and one iteration".into());
        }
        if !(self.optimizer.grad_tol > 0.0) {
            return bad("grad_tol must be positive".into());
        }
        Ok(())
    }
}

/// Standardized sample together with its gram system; reusable across
/// tuning parameters that share the bandwidth and normalization point.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    data: Dataset,
    standardization: Standardization,
    w_star_raw: Vec<f64>,
    gram: GramSystem,
}

impl PreparedSample {
    pub fn new(data: &Dataset, bandwidth: f64, w_star: &WStarPolicy) -> Result<Self> {
        let kernel = KernelSpec::new(bandwidth)?;
        let (std, standardization) = standardize(data);
        let w_star_raw = match w_star {
            WStarPolicy::Centered => standardization.mean.clone(),
            WStarPolicy::Point(p) => {
                check_dim(data.dim(), p.len())?;
                p.clone()
            }
        };
        let w_star_std = standardization.apply(&w_star_raw)?;
        let gram = build_gram(&kernel, &w_star_std, std.w())?;
        Ok(Self {
            data: std,
            standardization,
            w_star_raw,
            gram,
        })
    }

    /// The standardized sample.
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn gram(&self) -> &GramSystem {
        &self.gram
    }

    pub fn w_star_raw(&self) -> &[f64] {
        &self.w_star_raw
    }
}

/// The reduced least-squares problem in `(zeta, tau)`.
///
/// The solver works in whitened coordinates `eta_j = zeta_j / sqrt(lambda_j)`,
/// where the constraint is the ball `|eta| <= B` (the RKHS norm of the
/// fitted function) and every direction is on the same scale.
#[derive(Debug, Clone)]
pub struct PcProblem {
    y: Vec<f64>,
    v: Vec<f64>,
    /// Row-major `n x m`; row `i` is `(U_m[i+1, :] - U_m[0, :]) Lambda_m^{1/2}`.
    design: Vec<f64>,
    components: usize,
    order: usize,
    root_eigenvalues: Vec<f64>,
    radius: f64,
}

impl PcProblem {
    /// Uses the `trunc.effective` leading columns; `data` must be the
    /// standardized sample the gram system was built from.
    pub fn new(data: &Dataset, trunc: &Truncation, radius: f64, order: usize) -> Result<Self> {
        let n = data.len();
        check_dim(n + 1, trunc.basis.nrows())?;
        let m = trunc.effective;
        let root_eigenvalues: Vec<f64> = trunc.eigenvalues[..m].iter().map(|l| l.sqrt()).collect();
        let mut design = Vec::with_capacity(n * m);
        for i in 0..n {
            for (j, r) in root_eigenvalues.iter().enumerate() {
                design.push((trunc.basis[(i + 1, j)] - trunc.basis[(0, j)]) * r);
            }
        }
        Ok(Self {
            y: data.y().to_vec(),
            v: data.v().to_vec(),
            design,
            components: m,
            order,
            root_eigenvalues,
            radius,
        })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The feasible set in whitened coordinates.
    pub fn constraint(&self) -> Ellipsoid {
        Ellipsoid::from_eigenvalues(&vec![1.0; self.components], self.radius)
    }

    /// `zeta' Lambda_m^{-1} zeta`.
    pub fn constraint_value(&self, zeta: &[f64]) -> f64 {
        self.whiten(zeta).iter().map(|e| e * e).sum()
    }

    pub fn whiten(&self, zeta: &[f64]) -> Vec<f64> {
        zeta.iter().zip(&self.root_eigenvalues).map(|(z, r)| z / r).collect()
    }

    pub fn unwhiten(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter().zip(&self.root_eigenvalues).map(|(e, r)| e * r).collect()
    }

    fn index_whitened(&self, eta: &[f64]) -> Vec<f64> {
        let m = self.components;
        self.v
            .iter()
            .enumerate()
            .map(|(i, v)| v + self.design[i * m..(i + 1) * m].iter().zip(eta).map(|(d, e)| d * e).sum::<f64>())
            .collect()
    }

    /// `V_i + [U_m zeta]_{i+1} - [U_m zeta]_1` for every observation.
    pub fn index(&self, zeta: &[f64]) -> Vec<f64> {
        self.index_whitened(&self.whiten(zeta))
    }

    pub fn objective(&self, zeta: &[f64], dist: &HermiteDistribution) -> f64 {
        let mut s = dist.scratch();
        let idx = self.index(zeta);
        let n = self.y.len() as f64;
        self.y
            .iter()
            .zip(&idx)
            .map(|(y, u)| {
                let r = y - dist.eval(*u, None, &mut s).0;
                r * r
            })
            .sum::<f64>()
            / n
    }

    /// Gradients with respect to `zeta` and the free Hermite coefficients.
    pub fn objective_grad(&self, zeta: &[f64], dist: &HermiteDistribution) -> (Vec<f64>, Vec<f64>) {
        let mut ge = vec![0.0; self.components];
        let mut gt = vec![0.0; dist.order()];
        self.accumulate(&self.whiten(zeta), dist, &mut ge, &mut gt);
        let gz = ge.iter().zip(&self.root_eigenvalues).map(|(g, r)| g / r).collect();
        (gz, gt)
    }

    fn accumulate(&self, eta: &[f64], dist: &HermiteDistribution, ge: &mut [f64], gt: &mut [f64]) -> f64 {
        let m = self.components;
        let n = self.y.len() as f64;
        let mut s = dist.scratch();
        let mut dtau = vec![0.0; dist.order()];
        ge.iter_mut().for_each(|g| *g = 0.0);
        gt.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (i, &u) in self.index_whitened(eta).iter().enumerate() {
            let (cdf, pdf) = dist.eval(u, Some(&mut dtau), &mut s);
            let r = self.y[i] - cdf;
            total += r * r;
            let w = -2.0 * r / n;
            let row = &self.design[i * m..(i + 1) * m];
            for (g, d) in ge.iter_mut().zip(row) {
                *g += w * pdf * d;
            }
            for (g, d) in gt.iter_mut().zip(&dtau) {
                *g += w * d;
            }
        }
        total / n
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], Option<HermiteDistribution>) {
        let (eta, tau) = x.split_at(self.components);
        (eta, HermiteDistribution::new(tau).ok())
    }
}

/// The solver's view: `x = (eta, tau)`.
impl Objective for PcProblem {
    fn dim(&self) -> usize {
        self.components + self.order
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (eta, dist) = self.split(x);
        let Some(dist) = dist else {
            return f64::INFINITY;
        };
        let (ge, gt) = grad.split_at_mut(self.components);
        self.accumulate(eta, &dist, ge, gt)
    }

    /// Gauss–Newton matrix `(2/n) J'J` of the residuals.
    fn curvature(&self, x: &[f64]) -> Option<Mat<f64>> {
        let (eta, dist) = self.split(x);
        let dist = dist?;
        let m = self.components;
        let p = m + self.order;
        let n = self.y.len() as f64;
        let mut s = dist.scratch();
        let mut dtau = vec![0.0; self.order];
        let mut row = vec![0.0; p];
        let mut h = Mat::<f64>::zeros(p, p);
        for (i, &u) in self.index_whitened(eta).iter().enumerate() {
            let (_, pdf) = dist.eval(u, Some(&mut dtau), &mut s);
            for j in 0..m {
                row[j] = pdf * self.design[i * m + j];
            }
            row[m..].copy_from_slice(&dtau);
            for a in 0..p {
                if row[a] == 0.0 {
                    continue;
                }
                for b in a..p {
                    h[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                let v = 2.0 * h[(a, b)] / n;
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        Some(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitDiagnostics {
    /// Iterations of the selected restart.
    pub iterations: usize,
    pub total_iterations: usize,
    pub restarts: usize,
    pub converged_restarts: usize,
    pub selected_restart: usize,
    pub converged: bool,
    pub projected_gradient: f64,
    pub restart_objectives: Vec<f64>,
}

/// Components for assembling a model outside of `fit`.
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub kernel: KernelSpec,
    pub standardization: Standardization,
    pub w_star_raw: Vec<f64>,
    /// Raw-scale covariate rows used as kernel centers after `w*`.
    pub points: Vec<Vec<f64>>,
    /// One coefficient per center, `w*` first.
    pub delta: Vec<f64>,
    pub dist: HermiteDistribution,
}

/// A fitted estimator. Predictions take covariates on the raw scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnpModel {
    kernel: KernelSpec,
    standardization: Standardization,
    w_star_raw: Vec<f64>,
    /// Standardized centers, `w*` first.
    centers: Vec<Vec<f64>>,
    delta: Vec<f64>,
    zeta: Vec<f64>,
    dist: HermiteDistribution,
    config: FitConfig,
    /// `None` for models assembled from parts rather than fitted.
    objective: Option<f64>,
    truncation_residual: f64,
    effective_components: usize,
    constraint_value: f64,
    diagnostics: FitDiagnostics,
}

impl KnpModel {
    pub fn from_parts(parts: ModelParts) -> Result<Self> {
        let dim = parts.standardization.dim();
        check_dim(dim, parts.w_star_raw.len())?;
        check_dim(parts.points.len() + 1, parts.delta.len())?;
        let mut centers = vec![parts.standardization.apply(&parts.w_star_raw)?];
        for p in &parts.points {
            centers.push(parts.standardization.apply(p)?);
        }
        if parts.delta.iter().any(|d| !d.is_finite()) {
            return Err(KnpError::NonFinite("delta".into()));
        }
        Ok(Self {
            kernel: parts.kernel,
            standardization: parts.standardization,
            w_star_raw: parts.w_star_raw,
            centers,
            delta: parts.delta,
            zeta: Vec::new(),
            config: FitConfig {
                hermite_order: parts.dist.order(),
                bandwidth: parts.kernel.bandwidth(),
                ..FitConfig::default()
            },
            dist: parts.dist,
            objective: None,
            truncation_residual: 0.0,
            effective_components: 0,
            constraint_value: 0.0,
            diagnostics: FitDiagnostics::default(),
        })
    }

    /// Model with `g = 0` and error distribution `dist`, centered on `data`.
    pub fn zero_index(data: &Dataset, dist: HermiteDistribution) -> Result<Self> {
        let standardization = Standardization::fit(data.w());
        Self::from_parts(ModelParts {
            kernel: KernelSpec::default(),
            w_star_raw: standardization.mean.clone(),
            standardization,
            points: Vec::new(),
            delta: vec![0.0],
            dist,
        })
    }

    pub fn dim(&self) -> usize {
        self.standardization.dim()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Normalization point on the raw scale; `predict_g` is exactly zero there.
    pub fn w_star_raw(&self) -> &[f64] {
        &self.w_star_raw
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn dist(&self) -> &HermiteDistribution {
        &self.dist
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    /// In-sample objective at the solution; NaN for models not produced by a fit.
    pub fn objective(&self) -> f64 {
        self.objective.unwrap_or(f64::NAN)
    }

    /// First eigenvalue not used by the optimization.
    pub fn truncation_residual(&self) -> f64 {
        self.truncation_residual
    }

    pub fn effective_components(&self) -> usize {
        self.effective_components
    }

    /// `zeta' Lambda_m^{-1} zeta`, bounded by `B^2`.
    pub fn constraint_value(&self) -> f64 {
        self.constraint_value
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub(crate) fn g_standardized(&self, w: &[f64]) -> f64 {
        let w_star = &self.centers[0];
        self.centers
            .iter()
            .zip(&self.delta)
            .map(|(c, d)| d * (self.kernel.eval_unchecked(c, w) - self.kernel.eval_unchecked(c, w_star)))
            .sum()
    }

    /// `g(w) = sum_j delta_j (k(W_j, w) - k(W_j, w*))`.
    pub fn predict_g(&self, w: &[f64]) -> Result<f64> {
        let z = self.standardization.apply(w)?;
        Ok(self.g_standardized(&z))
    }

    /// Gradient of `g` with respect to the raw covariates.
    pub fn grad_g(&self, w: &[f64]) -> Result<Vec<f64>> {
        let z = self.standardization.apply(w)?;
        let mut g = vec![0.0; z.len()];
        for (c, d) in self.centers.iter().zip(&self.delta) {
            self.kernel.grad_into(c, &z, *d, &mut g);
        }
        for (gj, s) in g.iter_mut().zip(&self.standardization.scale) {
            *gj /= s;
        }
        Ok(g)
    }

    /// `F(v + g(w))`.
    pub fn predict_p(&self, v: f64, w: &[f64]) -> Result<f64> {
        Ok(self.dist.cdf(v + self.predict_g(w)?))
    }
}

/// Standardizes `data`, builds the gram system and fits.
pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<KnpModel> {
    cfg.validate(data.len())?;
    let prepared = PreparedSample::new(data, cfg.bandwidth, &cfg.w_star)?;
    fit_prepared(&prepared, cfg)
}

fn random_start(problem: &PcProblem, radius: f64, seed: u64, restart: usize) -> Vec<f64> {
    let m = problem.components;
    let mut x = vec![0.0; m + problem.order];
    if restart == 0 {
        return x;
    }
    let mut r = rng::stream(seed, "fit-restart", restart as u64);
    if m > 0 {
        // uniform in the ball: Gaussian direction, radius scaled by U^(1/m)
        let dir: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-300);
        let scale = radius * r.random::<f64>().powf(1.0 / m as f64) / norm;
        for (xj, d) in x.iter_mut().zip(&dir) {
            *xj = scale * d;
        }
    }
    for t in x[m..].iter_mut() {
        *t = r.random_range(-0.5..0.5);
    }
    x
}

/// Fits on a prepared sample; the bandwidth and `w*` of `cfg` are taken from
/// the sample.
pub fn fit_prepared(sample: &PreparedSample, cfg: &FitConfig) -> Result<KnpModel> {
    let n = sample.data.len();
    cfg.validate(n)?;
    let trunc = sample.gram.truncate(cfg.components)?;
    if cfg.strict_rank && trunc.effective < cfg.components {
        return Err(KnpError::RankExceeded {
            requested: cfg.components,
            effective: trunc.effective,
        });
    }
    let problem = PcProblem::new(&sample.data, &trunc, cfg.radius, cfg.hermite_order)?;
    let constraint = problem.constraint();
    let settings = Settings {
        max_iters: cfg.optimizer.max_iters,
        grad_tol: cfg.optimizer.grad_tol,
    };
    let restarts = cfg.optimizer.n_restarts;
    let outcomes: Vec<_> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let x0 = random_start(&problem, cfg.radius, cfg.seed, r);
            minimize(&problem, &x0, Some(&constraint), settings)
        })
        .collect();

    let total_iterations = outcomes.iter().map(|o| o.iterations).sum();
    let converged_restarts = outcomes.iter().filter(|o| o.converged).count();
    let best = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.converged)
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value));
    let Some((selected, best)) = best else {
        let closest = outcomes
            .iter()
            .min_by(|a, b| a.value.total_cmp(&b.value))
            .expect("at least one restart");
        return Err(KnpError::NotConverged {
            restarts,
            best_objective: closest.value,
            best_projected_gradient: closest.projected_gradient,
            iterations: total_iterations,
        });
    };

    let m = problem.components;
    let (eta, tau) = best.x.split_at(m);
    let dist = HermiteDistribution::new(tau)?;
    let zeta = problem.unwhiten(eta);
    let size = n + 1;
    // delta = U_m Lambda_m^{-1} zeta = U_m Lambda_m^{-1/2} eta
    let coef: Vec<f64> = eta.iter().zip(&problem.root_eigenvalues).map(|(e, r)| e / r).collect();
    let delta: Vec<f64> = (0..size)
        .map(|i| (0..m).map(|j| trunc.basis[(i, j)] * coef[j]).sum())
        .collect();

    Ok(KnpModel {
        kernel: *sample.gram.kernel(),
        standardization: sample.standardization.clone(),
        w_star_raw: sample.w_star_raw.clone(),
        centers: sample.gram.centers().to_vec(),
        delta,
        constraint_value: eta.iter().map(|e| e * e).sum(),
        zeta,
        dist,
        config: FitConfig {
            bandwidth: sample.gram.kernel().bandwidth(),
            w_star: WStarPolicy::Point(sample.w_star_raw.clone()),
            ..cfg.clone()
        },
        objective: Some(best.value),
        truncation_residual: trunc.effective_residual(),
        effective_components: m,
        diagnostics: FitDiagnostics {
            iterations: best.iterations,
            total_iterations,
            restarts,
            converged_restarts,
            selected_restart: selected,
            converged: best.converged,
            projected_gradient: best.projected_gradient,
            restart_objectives: outcomes.iter().map(|o| o.value).collect(),
        },
    })
}

/// Outcome of comparing a truncated fit against a reference objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub pc_objective: f64,
    pub reference_objective: f64,
    /// Grid supremum of the fitted density, standing in for the family bound.
    pub density_bound: f64,
    pub radius: f64,
    pub residual_eigenvalue: f64,
    /// `reference + 4 M B sqrt(residual)`.
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `Q(pc) <= Q(reference) + 4 M B sqrt(lambda_{m+1})` for a fitted model.
pub fn check_pc_bound(model: &KnpModel, reference_objective: f64) -> BoundReport {
    let density_bound = model.dist.density_sup(-12.0, 12.0, 4801);
    let radius = model.config.radius;
    let residual = model.truncation_residual.max(0.0);
    let bound = reference_objective + 4.0 * density_bound * radius * residual.sqrt();
    BoundReport {
        pc_objective: model.objective(),
        reference_objective,
        density_bound,
        radius,
        residual_eigenvalue: residual,
        bound,
        slack: bound - model.objective(),
        holds: model.objective() <= bound,
    }
}
