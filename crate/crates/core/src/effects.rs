//! Partial effects of the fitted choice probability `p(v, w) = F(v + g(w))`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, KnpError, Result};
use crate::estimator::KnpModel;
use crate::rng;

/// A coordinate of `x = (v, w_1, ..., w_d)`; `w` columns are 1-based in text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coordinate {
    V,
    /// Zero-based column of `W`.
    W(usize),
}

impl Coordinate {
    /// Position within the gradient vector `(d/dv, d/dw_1, ...)`.
    pub fn index(self) -> usize {
        match self {
            Coordinate::V => 0,
            Coordinate::W(j) => j + 1,
        }
    }

    pub fn check(self, dim: usize) -> Result<()> {
        match self {
            Coordinate::W(j) if j >= dim => Err(KnpError::InvalidParameter(format!(
                "coordinate {self} does not exist (W has {dim} columns)"
            ))),
            _ => Ok(()),
        }
    }

    fn value(self, v: f64, w: &[f64]) -> f64 {
        match self {
            Coordinate::V => v,
            Coordinate::W(j) => w[j],
        }
    }
}

impl FromStr for Coordinate {
    type Err = KnpError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "v" {
            return Ok(Coordinate::V);
        }
        match s.strip_prefix('w').and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if k >= 1 => Ok(Coordinate::W(k - 1)),
            _ => Err(KnpError::InvalidParameter(format!("unknown column `{s}` (expected v, w1, w2, ...)"))),
        }
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::V => f.write_str("v"),
            Coordinate::W(j) => write!(f, "w{}", j + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Comparison {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Comparison::Gt => a > b,
            Comparison::Ge => a >= b,
            Comparison::Lt => a < b,
            Comparison::Le => a <= b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
            Comparison::Lt => "<",
            Comparison::Le => "<=",
        }
    }
}

/// A subset of covariate space built from coordinate comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    All,
    Compare {
        coord: Coordinate,
        op: Comparison,
        value: f64,
    },
    Not(Box<Region>),
    And(Vec<Region>),
}

impl Region {
    pub fn contains(&self, v: f64, w: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Compare { coord, op, value } => op.holds(coord.value(v, w), *value),
            Region::Not(r) => !r.contains(v, w),
            Region::And(rs) => rs.iter().all(|r| r.contains(v, w)),
        }
    }

    pub fn complement(&self) -> Region {
        match self {
            Region::Not(r) => (**r).clone(),
            r => Region::Not(Box::new(r.clone())),
        }
    }

    /// Rejects comparisons on columns beyond `dim`.
    pub fn check(&self, dim: usize) -> Result<()> {
        match self {
            Region::All => Ok(()),
            Region::Compare { coord, .. } => coord.check(dim),
            Region::Not(r) => r.check(dim),
            Region::And(rs) => rs.iter().try_for_each(|r| r.check(dim)),
        }
    }
}

impl FromStr for Region {
    type Err = KnpError;

    /// Parses `w3>70`, `v<=0 & w1>2`, `!w2<1` or `all`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Region::All);
        }
        let bad = || KnpError::InvalidParameter(format!("cannot parse region `{s}` (expected e.g. w3>70)"));
        let parts = split_top_level(s).ok_or_else(bad)?;
        if parts.len() > 1 {
            return Ok(Region::And(parts.iter().map(|p| p.parse()).collect::<Result<_>>()?));
        }
        if let Some(rest) = s.strip_prefix('!') {
            return Ok(Region::Not(Box::new(rest.parse()?)));
        }
        if let Some(inner) = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
            return inner.parse();
        }
        let (pos, op, len) = [(">=", Comparison::Ge), ("<=", Comparison::Le), (">", Comparison::Gt), ("<", Comparison::Lt)]
            .iter()
            .find_map(|(sym, op)| s.find(sym).map(|p| (p, *op, sym.len())))
            .ok_or_else(bad)?;
        let coord: Coordinate = s[..pos].parse()?;
        let value: f64 = s[pos + len..].trim().parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        Ok(Region::Compare { coord, op, value })
    }
}

/// Splits on `&` outside parentheses; `None` if they are unbalanced.
fn split_top_level(s: &str) -> Option<Vec<&str>> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0usize, 0);
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.checked_sub(1)?,
            '&' if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    parts.push(s[start..].trim());
    Some(parts.into_iter().filter(|p| !p.is_empty()).collect())
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::All => f.write_str("all"),
            Region::Compare { coord, op, value } => write!(f, "{coord}{}{value}", op.symbol()),
            Region::Not(r) if matches!(**r, Region::And(_)) => write!(f, "!({r})"),
            Region::Not(r) => write!(f, "!{r}"),
            Region::And(rs) => {
                let parts: Vec<String> = rs.iter().map(|r| r.to_string()).collect();
                f.write_str(&parts.join(" & "))
            }
        }
    }
}

/// `(dp/dv, dp/dw_1, ..., dp/dw_d)` at `x = (v, w)`, on the raw covariate scale.
pub fn ccp_gradient(model: &KnpModel, v: f64, w: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.dim(), w.len())?;
    let density = model.dist().density(v + model.predict_g(w)?);
    let mut out = Vec::with_capacity(w.len() + 1);
    out.push(density);
    out.extend(model.grad_g(w)?.into_iter().map(|d| density * d));
    Ok(out)
}

fn derivatives(model: &KnpModel, data: &Dataset, coord: Coordinate) -> Result<Vec<f64>> {
    check_dim(model.dim(), data.dim())?;
    coord.check(data.dim())?;
    (0..data.len())
        .into_par_iter()
        .map(|i| Ok(ccp_gradient(model, data.v()[i], &data.w()[i])?[coord.index()]))
        .collect()
}

/// Average over `data` of `dp/dx_j`.
pub fn ape(model: &KnpModel, data: &Dataset, coord: Coordinate) -> Result<f64> {
    let d = derivatives(model, data, coord)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Average of `dp/dx_j` over the observations falling in `region`.
pub fn conditional_ape(model: &KnpModel, data: &Dataset, coord: Coordinate, region: &Region) -> Result<f64> {
    region.check(data.dim())?;
    let d = derivatives(model, data, coord)?;
    let (sum, count) = (0..data.len())
        .filter(|&i| region.contains(data.v()[i], &data.w()[i]))
        .fold((0.0, 0usize), |(s, c), i| (s + d[i], c + 1));
    if count == 0 {
        return Err(KnpError::EmptyRegion(region.to_string()));
    }
    // (1/n) sum 1{S} d  /  (1/n) sum 1{S}
    let n = data.len() as f64;
    Ok((sum / n) / (count as f64 / n))
}

/// Summary of a computed effect, with the metadata needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub coordinate: Coordinate,
    pub region: Region,
    pub value: f64,
    pub n_used: usize,
    pub n_total: usize,
}

pub fn summarize(model: &KnpModel, data: &Dataset, coord: Coordinate, region: &Region) -> Result<EffectSummary> {
    region.check(data.dim())?;
    let value = conditional_ape(model, data, coord, region)?;
    let n_used = (0..data.len())
        .filter(|&i| region.contains(data.v()[i], &data.w()[i]))
        .count();
    Ok(EffectSummary {
        coordinate: coord,
        region: region.clone(),
        value,
        n_used,
        n_total: data.len(),
    })
}

/// Points covering a box in `x = (v, w)` space, used to integrate against a
/// weight function. Each point carries the same share of the box volume.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationSample {
    pub points: Vec<(f64, Vec<f64>)>,
    pub volume: f64,
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<f64> {
    check_dim(lo.len(), hi.len())?;
    if lo.len() < 2 {
        return Err(KnpError::InvalidParameter("box needs bounds for v and at least one w".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
        return Err(KnpError::InvalidParameter("box bounds must be finite with lo < hi".into()));
    }
    Ok(lo.iter().zip(hi).map(|(a, b)| b - a).product())
}

impl IntegrationSample {
    /// Midpoint rule with `per_dim` cells along each axis of the box `[lo, hi]`
    /// (bounds ordered as `(v, w_1, ..., w_d)`).
    pub fn grid(lo: &[f64], hi: &[f64], per_dim: usize) -> Result<Self> {
        let volume = check_box(lo, hi)?;
        let dims = lo.len();
        let per_dim = per_dim.max(1);
        let total = per_dim
            .checked_pow(dims as u32)
            .filter(|&t| t <= 50_000_000)
            .ok_or_else(|| KnpError::InvalidParameter("integration grid too large".into()))?;
        let points = (0..total)
            .map(|mut k| {
                let mut x = Vec::with_capacity(dims);
                for d in 0..dims {
                    let cell = k % per_dim;
                    k /= per_dim;
                    x.push(lo[d] + (hi[d] - lo[d]) * (cell as f64 + 0.5) / per_dim as f64);
                }
                (x[0], x[1..].to_vec())
            })
            .collect();
        Ok(Self { points, volume })
    }

    /// `count` uniform draws from the box.
    pub fn uniform(lo: &[f64], hi: &[f64], count: usize, seed: u64) -> Result<Self> {
        let volume = check_box(lo, hi)?;
        let mut r = rng::stream(seed, "integration", 0);
        let points = (0..count.max(1))
            .map(|_| {
                let x: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| r.random_range(*a..*b)).collect();
                (x[0], x[1..].to_vec())
            })
            .collect();
        Ok(Self { points, volume })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDerivative {
    pub value: f64,
    /// Set when the weight is positive outside, or within 1% of the edge of,
    /// the bounding box of the sample covariates.
    pub support_warning: bool,
}

/// `int b(x) dp/dx_j dx`, estimated as `volume * mean(b(x) dp/dx_j)` over the
/// integration points.
pub fn weighted_avg_derivative<B>(
    model: &KnpModel,
    coord: Coordinate,
    weight: B,
    sample: &IntegrationSample,
    data: &Dataset,
) -> Result<WeightedDerivative>
where
    B: Fn(f64, &[f64]) -> f64 + Sync,
{
    coord.check(model.dim())?;
    check_dim(model.dim(), data.dim())?;
    let mut lo = vec![f64::INFINITY; data.dim() + 1];
    let mut hi = vec![f64::NEG_INFINITY; data.dim() + 1];
    for i in 0..data.len() {
        let x = std::iter::once(data.v()[i]).chain(data.w()[i].iter().copied());
        for (k, val) in x.enumerate() {
            lo[k] = lo[k].min(val);
            hi[k] = hi[k].max(val);
        }
    }
    let terms: Vec<(f64, bool)> = sample
        .points
        .par_iter()
        .map(|(v, w)| {
            let b = weight(*v, w);
            if b == 0.0 {
                return Ok((0.0, false));
            }
            let near_edge = std::iter::once(*v).chain(w.iter().copied()).enumerate().any(|(k, val)| {
                let margin = 0.01 * (hi[k] - lo[k]);
                val < lo[k] + margin || val > hi[k] - margin
            });
            Ok((b * ccp_gradient(model, *v, w)?[coord.index()], near_edge))
        })
        .collect::<Result<_>>()?;
    let mean = terms.iter().map(|t| t.0).sum::<f64>() / terms.len() as f64;
    Ok(WeightedDerivative {
        value: sample.volume * mean,
        support_warning: terms.iter().any(|t| t.1),
    })
}
