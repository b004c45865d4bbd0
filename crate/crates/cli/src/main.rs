//! `knp` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod io;

use config::RunConfig;
use error::{CliError, Result};

#[derive(Parser)]
#[command(name = "knp", version, about = "Kernelized nonparametric binary choice estimation")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for outputs and the resolved configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator at fixed tuning parameters and write model.json.
    Fit {
        /// CSV with columns y, v, w1..wd.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Cross-validate (B, J, m), write cv.csv and refit at the selected triple.
    Cv {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Average partial effects, optionally restricted to a region.
    Effects(EffectArgs),
    /// Pairs-bootstrap percentile intervals for average partial effects.
    Bootstrap {
        #[command(flatten)]
        effect: EffectArgs,

        /// Bootstrap replications.
        #[arg(long)]
        reps: Option<usize>,

        /// Confidence level; repeat for several.
        #[arg(long)]
        level: Vec<f64>,
    },
    /// Monte Carlo comparison of the estimator with baselines.
    Simulate {
        /// Design labels such as IIB; repeat or separate with commas.
        #[arg(long, value_delimiter = ',')]
        design: Vec<String>,

        /// Replications per design.
        #[arg(long)]
        nsim: Option<usize>,

        /// Training rows per replication.
        #[arg(long)]
        ntrain: Option<usize>,

        /// Held-out rows used to score each replication.
        #[arg(long)]
        ntest: Option<usize>,

        /// Write the generated train and test samples instead of fitting.
        #[arg(long)]
        emit_csv: bool,
    },
}

#[derive(Args)]
struct EffectArgs {
    #[arg(long)]
    data: Option<PathBuf>,

    /// Model file written by `fit` or `cv`.
    #[arg(long)]
    model: Option<PathBuf>,

    /// Coordinate such as v or w2; repeat for several (default: all).
    #[arg(long)]
    coord: Vec<String>,

    /// Region predicate such as "w3>70 & v<=0".
    #[arg(long = "where")]
    region: Option<String>,
}

impl EffectArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.data.is_some() {
            cfg.data = self.data;
        }
        if self.model.is_some() {
            cfg.model = self.model;
        }
        if !self.coord.is_empty() {
            cfg.effects.coords = self.coord;
        }
        if self.region.is_some() {
            cfg.effects.region = self.region;
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let Common {
        config,
        seed,
        threads,
        out_dir,
    } = cli.common;
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?;
    }
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = out_dir {
        cfg.out_dir = d;
    }
    let set_data = |cfg: &mut RunConfig, data: Option<PathBuf>| {
        if data.is_some() {
            cfg.data = data;
        }
    };

    let action = match cli.command {
        Command::Fit { data } => {
            set_data(&mut cfg, data);
            commands::fit
        }
        Command::Cv { data } => {
            set_data(&mut cfg, data);
            commands::cv
        }
        Command::Effects(args) => {
            args.apply(&mut cfg);
            commands::effects
        }
        Command::Bootstrap { effect, reps, level } => {
            effect.apply(&mut cfg);
            if let Some(r) = reps {
                cfg.bootstrap.replications = r;
            }
            if !level.is_empty() {
                cfg.bootstrap.levels = level;
            }
            commands::bootstrap
        }
        Command::Simulate {
            design,
            nsim,
            ntrain,
            ntest,
            emit_csv,
        } => {
            let s = &mut cfg.simulate;
            if !design.is_empty() {
                s.designs = design;
            }
            s.nsim = nsim.unwrap_or(s.nsim);
            s.ntrain = ntrain.unwrap_or(s.ntrain);
            s.ntest = ntest.or(s.ntest);
            if emit_csv {
                commands::emit_samples
            } else {
                commands::simulate
            }
        }
    };

    let cfg = cfg.resolve();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    let snapshot = cfg.out_dir.join("resolved_config.toml");
    std::fs::write(&snapshot, cfg.to_toml()).map_err(|e| CliError::io(&snapshot, e))?;
    action(&cfg)
}

pub fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or `{flag}` in the config file)")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation errors; --help and --version succeed
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
