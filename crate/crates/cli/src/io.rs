//! CSV datasets and versioned model files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use knp::simulation::SimSample;
use knp::{Dataset, KnpModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MODEL_FORMAT: &str = "knp-model";
pub const MODEL_VERSION: &str = "1.0";

/// Reads `y, v, w1..wd` by header name; other columns are ignored.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let err = |m: String| CliError::input(path, m);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(format!("missing column `{name}`")))
    };
    let y_col = find("y")?;
    let v_col = find("v")?;
    let dim = headers
        .iter()
        .filter(|h| h.strip_prefix('w').is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit())))
        .count();
    if dim == 0 {
        return Err(err("no covariate columns (expected w1, w2, ...)".into()));
    }
    let w_cols: Vec<usize> = (1..=dim).map(|j| find(&format!("w{j}"))).collect::<Result<_>>()?;

    let (mut y, mut v, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("line {line}: column `{}`: cannot parse `{raw}` as a finite number", &headers[col])))
        };
        let yi = cell(y_col)?;
        if yi != 0.0 && yi != 1.0 {
            return Err(err(format!("line {line}: y is {yi}, expected 0 or 1")));
        }
        y.push(yi);
        v.push(cell(v_col)?);
        w.push(w_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<f64>>>()?);
    }
    if y.is_empty() {
        return Err(err("no data rows".into()));
    }
    Dataset::new(y, v, w).map_err(|e| err(e.to_string()))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

/// Writes a simulated sample with its truth columns `g0, p0`.
pub fn write_sample(path: &Path, sample: &SimSample) -> Result<()> {
    let data = &sample.data;
    write_file(path, |out| {
        let w_names: Vec<String> = (1..=data.dim()).map(|j| format!("w{j}")).collect();
        writeln!(out, "y,v,{},g0,p0", w_names.join(","))?;
        for i in 0..data.len() {
            let w: Vec<String> = data.w()[i].iter().map(f64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                data.y()[i],
                data.v()[i],
                w.join(","),
                sample.g0[i],
                sample.p0[i]
            )?;
        }
        Ok(())
    })
}

/// SHA-256 of the model's fit configuration, hex encoded.
pub fn config_hash(model: &KnpModel) -> String {
    let json = serde_json::to_string(model.config()).expect("configuration is serializable");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: String,
    config_hash: String,
    dim: usize,
    model: KnpModel,
}

pub fn save_model(path: &Path, model: &KnpModel) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION.into(),
        config_hash: config_hash(model),
        dim: model.dim(),
        model: model.clone(),
    };
    write_file(path, |out| {
        serde_json::to_writer_pretty(&mut *out, &file)?;
        writeln!(out)
    })
}

fn major(version: &str) -> &str {
    version.split('.').next().unwrap_or(version)
}

/// Loads a model, rejecting other formats, other major versions and files
/// whose configuration hash does not match their contents.
pub fn load_model(path: &Path) -> Result<KnpModel> {
    let err = |m: String| CliError::input(path, m);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(format!("not JSON: {e}")))?;
    let field = |k: &str| value.get(k).and_then(|v| v.as_str()).unwrap_or("");
    if field("format") != MODEL_FORMAT {
        return Err(err("not a knp model file".into()));
    }
    let version = field("version");
    if major(version) != major(MODEL_VERSION) {
        return Err(err(format!(
            "model format version {version} is not readable by this build (expects {MODEL_VERSION})"
        )));
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| err(format!("malformed model: {e}")))?;
    if file.dim != file.model.dim() {
        return Err(err("covariate dimension does not match the model".into()));
    }
    if file.config_hash != config_hash(&file.model) {
        return Err(err("configuration hash mismatch".into()));
    }
    Ok(file.model)
}

/// Checks that `data` has the covariate dimension `model` was fitted on.
pub fn check_compatible(model: &KnpModel, data: &Dataset, data_path: &Path) -> Result<()> {
    if model.dim() != data.dim() {
        return Err(CliError::input(
            data_path,
            format!("data has {} covariates, model expects {}", data.dim(), model.dim()),
        ));
    }
    Ok(())
}
