use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{KnpError, Result};
use crate::hermite::std_normal_cdf;
use crate::rng;

pub const BETA: [f64; 10] = [0.63, 0.81, -0.75, 0.83, 0.26, -0.80, -0.44, 0.09, 0.92, 0.93];

/// Systematic function `g0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Systematic {
    /// `g0(w) = w`, scalar `W ~ U[-2, 2]`.
    I,
    /// `g0(w) = w^2/2 + sin(pi w)`, scalar `W ~ U[-2, 2]`.
    II,
    /// `g0(w) = beta'w`, `W ~ U[0, 1]^10`.
    III,
    /// `g0(w) = sum_j beta_j (w_j^2/2 + sin(pi w_j))`, `W ~ U[0, 1]^10`.
    IV,
}

/// Error distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorSpec {
    /// Standard normal.
    A,
    /// `N(-3, 1)` with probability 1/4, `N(2, 1)` otherwise.
    B,
}

fn bumpy(w: f64) -> f64 {
    0.5 * w * w + (std::f64::consts::PI * w).sin()
}

impl Systematic {
    pub fn dim(self) -> usize {
        match self {
            Systematic::I | Systematic::II => 1,
            Systematic::III | Systematic::IV => BETA.len(),
        }
    }

    pub fn g0(self, w: &[f64]) -> f64 {
        match self {
            Systematic::I => w[0],
            Systematic::II => bumpy(w[0]),
            Systematic::III => BETA.iter().zip(w).map(|(b, x)| b * x).sum(),
            Systematic::IV => BETA.iter().zip(w).map(|(b, x)| b * bumpy(*x)).sum(),
        }
    }

    fn draw_w<R: Rng>(self, r: &mut R) -> Vec<f64> {
        match self {
            Systematic::I | Systematic::II => vec![r.random_range(-2.0..2.0)],
            Systematic::III | Systematic::IV => (0..BETA.len()).map(|_| r.random::<f64>()).collect(),
        }
    }
}

impl ErrorSpec {
    pub fn cdf(self, u: f64) -> f64 {
        match self {
            ErrorSpec::A => std_normal_cdf(u),
            ErrorSpec::B => 0.25 * std_normal_cdf(u + 3.0) + 0.75 * std_normal_cdf(u - 2.0),
        }
    }

    pub fn draw<R: Rng>(self, r: &mut R) -> f64 {
        let z: f64 = r.sample(StandardNormal);
        match self {
            ErrorSpec::A => z,
            ErrorSpec::B => {
                if r.random::<f64>() < 0.25 {
                    z - 3.0
                } else {
                    z + 2.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// A data-generating process together with sample sizes and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub systematic: Systematic,
    pub error: ErrorSpec,
    pub ntrain: usize,
    pub ntest: usize,
    pub nsim: usize,
    pub seed: u64,
}

impl SimDesign {
    /// Desk-scale defaults: 2000 training rows, 10k test rows for scalar `W`
    /// and 100k for ten covariates.
    pub fn new(systematic: Systematic, error: ErrorSpec) -> Self {
        let ntest = if systematic.dim() == 1 { 10_000 } else { 100_000 };
        Self {
            systematic,
            error,
            ntrain: 2000,
            ntest,
            nsim: 50,
            seed: 0,
        }
    }

    pub fn label(&self) -> String {
        format!("{:?}{:?}", self.systematic, self.error)
    }

    pub fn dim(&self) -> usize {
        self.systematic.dim()
    }

    /// Where every `g0` vanishes; the location normalization for all methods.
    pub fn w_star(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// `F0(v + g0(w))`.
    pub fn p0(&self, v: f64, w: &[f64]) -> f64 {
        self.error.cdf(v + self.systematic.g0(w))
    }
}

impl FromStr for SimDesign {
    type Err = KnpError;

    /// Parses labels such as `IA` or `ivb` (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        let bad = || KnpError::InvalidParameter(format!("unknown design `{s}` (expected I-IV followed by A or B)"));
        if up.len() < 2 {
            return Err(bad());
        }
        let (g, e) = up.split_at(up.len() - 1);
        let systematic = match g {
            "I" => Systematic::I,
            "II" => Systematic::II,
            "III" => Systematic::III,
            "IV" => Systematic::IV,
            _ => return Err(bad()),
        };
        let error = match e {
            "A" => ErrorSpec::A,
            "B" => ErrorSpec::B,
            _ => return Err(bad()),
        };
        Ok(Self::new(systematic, error))
    }
}

impl fmt::Display for SimDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Generated observations with the true index function and choice probability.
#[derive(Debug, Clone)]
pub struct SimSample {
    pub data: Dataset,
    pub g0: Vec<f64>,
    pub p0: Vec<f64>,
}

/// Draws replication `rep` of the train or test sample. The stream is keyed
/// by design label, split and replication, so any replication can be
/// regenerated on its own.
pub fn generate(design: &SimDesign, split: Split, rep: usize) -> Result<SimSample> {
    if rep >= design.nsim {
        return Err(KnpError::InvalidParameter(format!(
            "replication {rep} outside 0..{}",
            design.nsim
        )));
    }
    let n = match split {
        Split::Train => design.ntrain,
        Split::Test => design.ntest,
    };
    let label = format!("sim-{}-{:?}", design.label(), split);
    let mut r = rng::stream(design.seed, &label, rep as u64);
    let mut y = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut g0 = Vec::with_capacity(n);
    let mut p0 = Vec::with_capacity(n);
    for _ in 0..n {
        let vi: f64 = r.sample(StandardNormal);
        let wi = design.systematic.draw_w(&mut r);
        let eps = design.error.draw(&mut r);
        let gi = design.systematic.g0(&wi);
        y.push(if vi + gi - eps > 0.0 { 1.0 } else { 0.0 });
        p0.push(design.error.cdf(vi + gi));
        g0.push(gi);
        v.push(vi);
        w.push(wi);
    }
    Ok(SimSample {
        data: Dataset::new(y, v, w)?,
        g0,
        p0,
    })
}
