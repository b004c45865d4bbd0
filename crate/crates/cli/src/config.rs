//! Declarative run configuration, read from TOML and overridden by flags.

use std::path::{Path, PathBuf};

use knp::inference::BootstrapSpec;
use knp::selection::TuningTriple;
use knp::simulation::{SimConfig, SimDesign};
use knp::FitConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream: restarts, folds, bootstrap draws and
    /// simulated samples.
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub fit: FitConfig,
    pub cv: CvSection,
    pub effects: EffectsSection,
    pub bootstrap: BootstrapSection,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            model: None,
            out_dir: PathBuf::from("."),
            fit: FitConfig::default(),
            cv: CvSection::default(),
            effects: EffectsSection::default(),
            bootstrap: BootstrapSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    /// Defaults to the full `B x J x m` grid when absent.
    pub grid: Option<Vec<TuningTriple>>,
}

impl Default for CvSection {
    fn default() -> Self {
        Self { folds: 5, grid: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectsSection {
    /// Coordinates such as `v` or `w2`; empty means all of them.
    pub coords: Vec<String>,
    /// Region predicate such as `w3>70 & v<=0`.
    #[serde(rename = "where")]
    pub region: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub replications: usize,
    pub levels: Vec<f64>,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let spec = BootstrapSpec::default();
        Self {
            replications: spec.replications,
            levels: spec.levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub designs: Vec<String>,
    pub nsim: usize,
    pub ntrain: usize,
    /// Defaults to 10k rows for scalar `W` and 100k for ten covariates.
    pub ntest: Option<usize>,
    pub settings: SimConfig,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            designs: vec!["IIB".into()],
            nsim: 50,
            ntrain: 2000,
            ntest: None,
            settings: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|m| CliError::input(path, m))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always serializable")
    }

    /// Pushes the top-level seed into every sub-configuration.
    pub fn resolve(mut self) -> Self {
        self.fit.seed = self.seed;
        self
    }

    pub fn bootstrap_spec(&self) -> BootstrapSpec {
        BootstrapSpec {
            replications: self.bootstrap.replications,
            levels: self.bootstrap.levels.clone(),
            seed: self.seed,
        }
    }

    pub fn designs(&self) -> Result<Vec<SimDesign>> {
        let s = &self.simulate;
        if s.designs.is_empty() {
            return Err(CliError::Usage("no simulation design given".into()));
        }
        s.designs
            .iter()
            .map(|label| {
                let d: SimDesign = label.parse()?;
                Ok(SimDesign {
                    nsim: s.nsim,
                    ntrain: s.ntrain,
                    ntest: s.ntest.unwrap_or(d.ntest),
                    seed: self.seed,
                    ..d
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::parse("seed = 7\n[fit]\nradius = 3.0\nhermite_order = 4\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.fit.radius, 3.0);
        assert_eq!(cfg.fit.components, FitConfig::default().components);
        assert!(RunConfig::parse("sed = 7\n").is_err());
    }
}
