//! `sweep`: refit one method over a grid of contrast strengths.

use std::path::PathBuf;

use contrastkit::linear::log_grid;
use contrastkit::preprocess::{cde_estimate_dim, estimate_subspace};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::io::format_value;
use crate::pipeline::{gamma_sweep, prepare, stamp};
use crate::report::{DimSource, SweepPoint};

pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_PLOT_FILE: &str = "sweep_plot.csv";

/// Parses `log:lo:hi:n`, `lin:lo:hi:n` or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |m: String| CliError::Config(format!("grid `{text}`: {m}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.as_slice() {
        [kind @ ("log" | "lin"), lo, hi, n] => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            let n: usize = n.trim().parse().map_err(|_| bad(format!("`{n}` is not a count")))?;
            if n == 0 {
                return Err(bad("count must be positive".into()));
            }
            if *kind == "log" {
                if !(lo > 0.0 && hi > 0.0) {
                    return Err(bad("log grid bounds must be positive".into()));
                }
                log_grid(lo, hi, n)
            } else if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<f64>>>()?,
        _ => return Err(bad("expected log:lo:hi:n, lin:lo:hi:n or a list".into())),
    };
    if grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(bad("values must be finite and >= 0".into()));
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub param: String,
    pub d_used: usize,
    pub d_source: DimSource,
    pub points: Vec<SweepPoint>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

/// Fits the configured method at every grid value. The dimension is the
/// configured `d`, otherwise the point estimate from the subspace angles
/// (no bootstrap test is run).
pub fn run_sweep(cfg: &PipelineConfig, param: &str, grid: &[f64], emit_plot_data: bool) -> Result<SweepReport> {
    cfg.validate()?;
    if param != "gamma" {
        return Err(CliError::Config(format!("cannot sweep `{param}`; only gamma is supported")));
    }
    if !cfg.method.uses_gamma() {
        return Err(CliError::Config(format!("method {} takes no gamma", cfg.method)));
    }
    let prep = prepare(cfg)?;
    let sx = estimate_subspace(&prep.foreground.data, cfg.dim_rule)?;
    let sy = estimate_subspace(&prep.background.data, cfg.dim_rule)?;
    let (d, d_source) = match cfg.d {
        Some(d) => (d, DimSource::User),
        None => match cde_estimate_dim(&sx, &sy, cfg.epsilon_cde)? {
            0 => (1, DimSource::Fallback),
            d => (d, DimSource::Estimated),
        },
    };
    let points = gamma_sweep(cfg.method, &prep, grid, d, cfg.shared_dim.unwrap_or(sy.dim), cfg.seed);

    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let mut outputs = vec![SWEEP_FILE.to_string()];
    if emit_plot_data {
        let path = cfg.output_dir.join(SWEEP_PLOT_FILE);
        std::fs::write(&path, plot_rows(&stamp(cfg), &points)).map_err(|e| CliError::io(&path, e))?;
        outputs.push(SWEEP_PLOT_FILE.into());
    }
    let report = SweepReport {
        schema: "sweep_v1".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        method: cfg.method.to_string(),
        param: param.into(),
        d_used: d,
        d_source,
        points,
        outputs,
    };
    let path: PathBuf = cfg.output_dir.join(SWEEP_FILE);
    let mut json = serde_json::to_string_pretty(&report).expect("sweep report serializes");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}

/// Tidy rows `gamma,metric,component,value`; failed points are skipped.
fn plot_rows(stamp: &str, points: &[SweepPoint]) -> String {
    let mut out = format!("# {stamp}\ngamma,metric,component,value\n");
    for pt in points {
        let g = format_value(pt.gamma);
        if let Some(obj) = pt.objective {
            out.push_str(&format!("{g},objective,,{}\n", format_value(obj)));
        }
        for (j, v) in pt.eigenvalues.iter().flatten().enumerate() {
            out.push_str(&format!("{g},eigenvalue,{},{}\n", j + 1, format_value(*v)));
        }
    }
    out
}
