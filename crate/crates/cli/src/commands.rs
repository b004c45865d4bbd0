use std::io::Write;
use std::path::PathBuf;

use knp::effects::{summarize, Coordinate, Region};
use knp::inference::{bootstrap_with_model, BootstrapTarget};
use knp::selection::{cross_validate, default_grid, CvPlan};
use knp::simulation::{generate, replicate_table, Split};
use knp::{Dataset, KnpModel};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;
use crate::require;

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    io::read_dataset(require(&cfg.data, "data")?)
}

fn print_summary(model: &KnpModel, n: usize) {
    let c = model.config();
    let d = model.diagnostics();
    println!("observations        {n}");
    println!("covariates          {}", model.dim());
    println!("B, J, m             {}, {}, {}", c.radius, c.hermite_order, c.components);
    println!("components used     {}", model.effective_components());
    println!("objective           {:.10}", model.objective());
    println!("lambda_(m+1)        {:.6e}", model.truncation_residual());
    println!("RKHS norm^2 / B^2   {:.6}", model.constraint_value() / (c.radius * c.radius));
    println!("iterations          {} ({} over all restarts)", d.iterations, d.total_iterations);
    println!("converged restarts  {} of {}", d.converged_restarts, d.restarts);
    println!("converged           {}", d.converged);
}

fn save(cfg: &RunConfig, model: &KnpModel) -> Result<PathBuf> {
    let path = cfg.out_dir.join("model.json");
    io::save_model(&path, model)?;
    Ok(path)
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let model = knp::fit(&data, &cfg.fit)?;
    print_summary(&model, data.len());
    println!("model written to {}", save(cfg, &model)?.display());
    Ok(())
}

pub fn cv(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let plan = CvPlan {
        folds: cfg.cv.folds,
        grid: cfg.cv.grid.clone().unwrap_or_else(|| default_grid(data.len())),
        seed: cfg.seed,
    };
    let result = cross_validate(&data, &plan, &cfg.fit)?;
    let table = cfg.out_dir.join("cv.csv");
    io::write_file(&table, |out| result.write_csv(out))?;
    let best = result.best;
    println!(
        "selected B = {}, J = {}, m = {} ({} candidates, {} folds)",
        best.radius,
        best.hermite_order,
        best.components,
        plan.grid.len(),
        plan.folds
    );
    let model = knp::fit(&data, &best.apply(&cfg.fit))?;
    print_summary(&model, data.len());
    println!("scores written to {}", table.display());
    println!("model written to {}", save(cfg, &model)?.display());
    Ok(())
}

/// Model, data, coordinates and optional region named by the configuration.
fn effect_inputs(cfg: &RunConfig) -> Result<(KnpModel, Dataset, Vec<Coordinate>, Option<Region>)> {
    let default_model = cfg.out_dir.join("model.json");
    let model_path = cfg.model.as_deref().unwrap_or(&default_model);
    let model = io::load_model(model_path)?;
    let data_path = require(&cfg.data, "data")?;
    let data = io::read_dataset(data_path)?;
    io::check_compatible(&model, &data, data_path)?;
    let coords: Vec<Coordinate> = if cfg.effects.coords.is_empty() {
        std::iter::once(Coordinate::V).chain((0..data.dim()).map(Coordinate::W)).collect()
    } else {
        cfg.effects.coords.iter().map(|c| c.parse()).collect::<knp::Result<_>>()?
    };
    for c in &coords {
        c.check(data.dim())?;
    }
    let region = match &cfg.effects.region {
        Some(s) => {
            let r: Region = s.parse()?;
            r.check(data.dim())?;
            Some(r)
        }
        None => None,
    };
    Ok((model, data, coords, region))
}

pub fn effects(cfg: &RunConfig) -> Result<()> {
    let (model, data, coords, region) = effect_inputs(cfg)?;
    let mut regions = vec![Region::All];
    if let Some(r) = region {
        regions.push(r.complement());
        regions.insert(1, r);
    }
    let mut rows = Vec::new();
    for c in &coords {
        for (k, r) in regions.iter().enumerate() {
            match summarize(&model, &data, *c, r) {
                Ok(s) => rows.push(s),
                // the user's region must be non-empty; its complement may be
                Err(knp::KnpError::EmptyRegion(_)) if k == 2 => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    let path = cfg.out_dir.join("effects.csv");
    io::write_file(&path, |out| {
        writeln!(out, "coordinate,region,value,n_used,n_total")?;
        for s in &rows {
            writeln!(out, "{},\"{}\",{},{},{}", s.coordinate, s.region, s.value, s.n_used, s.n_total)?;
        }
        Ok(())
    })?;
    for s in &rows {
        println!("{:>4}  {:<24} {:>12.6}  (n = {})", s.coordinate.to_string(), s.region.to_string(), s.value, s.n_used);
    }
    println!("effects written to {}", path.display());
    Ok(())
}

pub fn bootstrap(cfg: &RunConfig) -> Result<()> {
    let (model, data, coords, region) = effect_inputs(cfg)?;
    let targets: Vec<BootstrapTarget> = coords
        .iter()
        .map(|&coord| match &region {
            Some(r) => BootstrapTarget::Cape {
                coord,
                region: r.clone(),
            },
            None => BootstrapTarget::Ape { coord },
        })
        .collect();
    let spec = cfg.bootstrap_spec();
    // refits reuse the fitted model's tuning and solver settings
    let fit_cfg = knp::FitConfig {
        seed: cfg.seed,
        ..model.config().clone()
    };
    let result = bootstrap_with_model(&data, &model, &fit_cfg, &spec, &targets)?;
    let path = cfg.out_dir.join("bootstrap.csv");
    io::write_file(&path, |out| result.write_csv(out))?;
    for iv in &result.intervals {
        println!(
            "{:<24} {:>4.0}%  {:>12.6}  [{:.6}, {:.6}]",
            iv.target,
            iv.level * 100.0,
            iv.estimate,
            iv.lower,
            iv.upper
        );
    }
    println!(
        "{} of {} refits failed; intervals written to {}",
        result.failed,
        result.total,
        path.display()
    );
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let designs = cfg.designs()?;
    let settings = &cfg.simulate.settings;
    let table = replicate_table(&designs, settings)?;
    let dir = &cfg.out_dir;
    let csv = dir.join("table.csv");
    io::write_file(&csv, |out| table.write_csv(out))?;
    io::write_file(&dir.join("replications.csv"), |out| table.write_replications_csv(out))?;
    let meta = dir.join("metadata.json");
    io::write_file(&meta, |out| {
        serde_json::to_writer_pretty(&mut *out, &table.metadata(settings))?;
        writeln!(out)
    })?;
    table.write_csv(std::io::stdout().lock()).map_err(|e| CliError::io("<stdout>", e))?;
    println!("table written to {}", csv.display());
    Ok(())
}

pub fn emit_samples(cfg: &RunConfig) -> Result<()> {
    for design in cfg.designs()? {
        for rep in 0..design.nsim {
            for split in [Split::Train, Split::Test] {
                let sample = generate(&design, split, rep)?;
                let name = format!("{}-{}-{rep}.csv", design.label(), if split == Split::Train { "train" } else { "test" });
                let path = cfg.out_dir.join(name);
                io::write_sample(&path, &sample)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
