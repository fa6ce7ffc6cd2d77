//! `synth`: write a generated dataset as CSV files plus its ground truth.

use std::path::{Path, PathBuf};

use contrastkit::synth::{generate, GeneratorModel, GeneratorSpec};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io::{save_curves, save_matrix};

pub const RESPONSE_COLUMN: &str = "response";

#[derive(Debug, Serialize)]
struct TruthFile<'a> {
    spec: &'a GeneratorSpec,
    /// Row-major p x k.
    shared: Option<Vec<Vec<f64>>>,
    salient: Option<Vec<Vec<f64>>>,
    beta: Option<Vec<f64>>,
    planted_indices: &'a [usize],
    contrastive_dim: Option<usize>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn load_spec(path: &Path) -> Result<GeneratorSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Appends the response as a last column.
fn with_response(m: &DMatrix<f64>, r: Option<&Vec<f64>>) -> (DMatrix<f64>, Vec<String>) {
    let mut names: Vec<String> = (0..m.ncols()).map(|j| format!("x{j}")).collect();
    match r {
        Some(r) => {
            names.push(RESPONSE_COLUMN.into());
            let mut out = m.clone().insert_column(m.ncols(), 0.0);
            out.column_mut(m.ncols()).copy_from_slice(r);
            (out, names)
        }
        None => (m.clone(), names),
    }
}

/// Generates the dataset and writes it into `out`; returns the written files.
pub fn run_synth(spec: &GeneratorSpec, out: &Path) -> Result<Vec<PathBuf>> {
    let data = generate(spec)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let stamp = format!("seed={}", spec.seed);
    let mut written = Vec::new();
    let mut save = |name: &str, m: &DMatrix<f64>, r: Option<&Vec<f64>>| -> Result<()> {
        let path = out.join(name);
        match &data.grid {
            Some(grid) if spec.model == GeneratorModel::PlantedCurves => save_curves(&path, &stamp, grid, m)?,
            _ => {
                let (m, names) = with_response(m, r);
                save_matrix(&path, &stamp, &names, &m)?;
            }
        }
        written.push(path);
        Ok(())
    };
    save("foreground.csv", &data.foreground, data.response_fg.as_ref())?;
    save("background.csv", &data.background, data.response_bg.as_ref())?;
    for (j, c) in data.candidates.iter().enumerate() {
        save(&format!("candidate_{}.csv", j + 1), c, None)?;
    }
    let truth = TruthFile {
        spec,
        shared: data.truth.shared.as_ref().map(rows),
        salient: data.truth.salient.as_ref().map(rows),
        beta: data.truth.beta.as_ref().map(|b| b.iter().copied().collect()),
        planted_indices: &data.truth.planted_indices,
        contrastive_dim: data.truth.contrastive_dim,
    };
    let path = out.join("truth.json");
    let mut json = serde_json::to_string_pretty(&truth).expect("truth serializes");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
    written.push(path);
    Ok(written)
}
