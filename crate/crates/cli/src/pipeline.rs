//! The batch workflow: background selection, contrastive-dimension test,
//! dimension choice, method fit and artifact writing.

use std::path::Path;
use std::time::Instant;

use contrastkit::linalg::{center_columns, select_columns};
use contrastkit::linear::{ccur_select, cpca_fit, cpca_transform, default_gamma_grid, gcpca_fit, gcpca_transform};
use contrastkit::model::{clvm_fit_em, clvm_transform, pcpca_contrastive_loglik, pcpca_fit, pcpca_transform, EmOptions};
use contrastkit::preprocess::{bascod_test, cde_test, estimate_subspace, BascodOptions, CdeOptions, DimRule};
use contrastkit::structured::{cfpca_fit, cfpca_scores, cir_fit, cir_transform, clr_fit, clr_transform, CirOptions, CurveSet};
use contrastkit::DataMatrix;
use nalgebra::{DMatrix, DVector};

use crate::config::{Method, PipelineConfig};
use crate::error::{CliError, Result};
use crate::io::{load_curves, load_table, save_matrix, Table};
use crate::report::{
    BackgroundSelection, DimSource, FitDiagnostics, OutputFile, RunReport, RunStatus, SelectedFeature, SubspaceDims,
    SweepPoint, Timings, NO_SIGNAL_MESSAGE, SCHEMA,
};

pub const REPORT_FILE: &str = "report.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const LOADINGS_FILE: &str = "loadings.csv";
pub const FEATURES_FILE: &str = "selected_features.csv";
pub const PLOT_FILE: &str = "plot_embedding.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Cap on bootstrap worker threads.
    pub threads: usize,
    /// Also write a tidy long-format copy of the embedding.
    pub emit_plot_data: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            emit_plot_data: false,
        }
    }
}

/// One dataset as the fitting code sees it.
#[derive(Debug, Clone)]
pub struct Group {
    pub data: DataMatrix,
    pub response: Option<Vec<f64>>,
    pub curves: Option<CurveSet>,
}

/// Loaded inputs with the background already chosen.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub foreground: Group,
    pub background: Group,
    pub names: Vec<String>,
    pub selection: Option<BackgroundSelection>,
    pub load_ms: f64,
    pub selection_ms: f64,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn load_group(cfg: &PipelineConfig, path: &Path, foreground: bool) -> Result<(Group, Vec<String>)> {
    if cfg.method == Method::Cfpca {
        let curves = load_curves(path, cfg.has_header)?;
        let data = DataMatrix::new(curves.values().clone()).map_err(CliError::Numerical)?;
        let names = (0..data.p()).map(|j| format!("t{j}")).collect();
        return Ok((Group { data, response: None, curves: Some(curves) }, names));
    }
    // backgrounds need the response only for CIR, but a present column is
    // always split off so feature sets line up
    let required = foreground || cfg.method == Method::Cir;
    let Table { data, response, names } = load_table(path, cfg.has_header, cfg.response_column.as_deref(), required)?;
    Ok((Group { data, response, curves: None }, names))
}

/// Loads every input and runs background selection when there are several
/// candidates.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    let t = Instant::now();
    let (foreground, names) = load_group(cfg, &cfg.foreground_path, true)?;
    let mut backgrounds = Vec::with_capacity(cfg.background_paths.len());
    for path in &cfg.background_paths {
        let (g, bg_names) = load_group(cfg, path, false)?;
        if g.data.p() != foreground.data.p() {
            return Err(CliError::Config(format!(
                "{} has {} features, the foreground has {}",
                path.display(),
                g.data.p(),
                foreground.data.p()
            )));
        }
        if cfg.has_header && cfg.method != Method::Cfpca && bg_names != names {
            return Err(CliError::Config(format!("{}: feature names differ from the foreground", path.display())));
        }
        if let (Some(a), Some(b)) = (&foreground.curves, &g.curves) {
            if a.grid() != b.grid() {
                return Err(CliError::Config(format!("{}: time grid differs from the foreground", path.display())));
            }
        }
        backgrounds.push(g);
    }
    if let Some(d) = cfg.d {
        if d > foreground.data.p() {
            return Err(CliError::Config(format!("d = {d} exceeds the {} features", foreground.data.p())));
        }
    }
    let load_ms = elapsed_ms(t);

    let t = Instant::now();
    let (selected, selection) = if backgrounds.len() > 1 {
        let candidates: Vec<DataMatrix> = backgrounds.iter().map(|g| g.data.clone()).collect();
        let opts = BascodOptions {
            dim_rule: cfg.dim_rule,
            epsilon: cfg.epsilon_bascod,
            alpha: cfg.alpha,
            tail: cfg.bascod_tail,
        };
        let test = bascod_test(&foreground.data, &candidates, &opts)?;
        // largest p-value among accepted candidates, ties to the first
        let mut best: Option<usize> = None;
        for (j, c) in test.candidates.iter().enumerate() {
            if !c.rejected && best.is_none_or(|b| c.p_value > test.candidates[b].p_value) {
                best = Some(j);
            }
        }
        let selected = best.ok_or(CliError::NoValidBackground)?;
        (selected, Some(BackgroundSelection { test, selected }))
    } else {
        (0, None)
    };
    let selection_ms = elapsed_ms(t);
    let background = backgrounds.swap_remove(selected);
    Ok(Prepared {
        foreground,
        background,
        names,
        selection,
        load_ms,
        selection_ms,
    })
}

/// Result of fitting one method at one setting.
#[derive(Debug, Clone)]
pub struct FitOutput {
    /// n_x x d foreground embedding.
    pub embedding: DMatrix<f64>,
    /// Feature-space loadings (p x d), absent for CCUR.
    pub loadings: Option<DMatrix<f64>>,
    pub diagnostics: FitDiagnostics,
    pub selected: Option<Vec<SelectedFeature>>,
}

fn leading(v: &DVector<f64>, d: usize) -> Vec<f64> {
    v.iter().take(d).copied().collect()
}

/// Fits `method` on the prepared data. `shared_dim` is the CLVM shared
/// latent dimension.
pub fn fit_method(
    method: Method,
    prep: &Prepared,
    gamma: f64,
    d: usize,
    shared_dim: usize,
    seed: u64,
) -> Result<FitOutput> {
    let (fg, bg) = (&prep.foreground, &prep.background);
    let (xc, _) = center_columns(&fg.data)?;
    let (yc, _) = center_columns(&bg.data)?;
    let mut diag = FitDiagnostics::default();
    let em = EmOptions {
        seed,
        ..EmOptions::default()
    };
    let (embedding, loadings, selected) = match method {
        Method::Cpca => {
            let m = cpca_fit(&xc, &yc, gamma, d)?;
            diag.objective = Some(m.objective());
            diag.eigenvalues = Some(leading(&m.contrastive_eigenvalues, d));
            let e = cpca_transform(&m, xc.as_matrix())?;
            (e.values, Some(m.loadings.into_inner()), None)
        }
        Method::Gcpca(variant) => {
            let m = gcpca_fit(&xc, &yc, d, variant)?;
            diag.objective = Some(m.objective_value);
            diag.eigenvalues = Some(leading(&m.eigenvalues, d));
            let e = gcpca_transform(&m, xc.as_matrix())?;
            (e.values, Some(m.loadings.into_inner()), None)
        }
        Method::Ccur => {
            let sel = ccur_select(&xc, &yc, None, d, 0, None)?;
            diag.extra.insert("k".into(), sel.k as f64);
            diag.extra.insert("eps".into(), sel.eps);
            let features = sel
                .column_indices
                .iter()
                .map(|&j| SelectedFeature {
                    index: j,
                    name: prep.names[j].clone(),
                    score: sel.contrastive_scores[j],
                })
                .collect();
            (select_columns(xc.as_matrix(), &sel.column_indices), None, Some(features))
        }
        Method::Pcpca => {
            let m = pcpca_fit(&xc, &yc, gamma, d)?;
            diag.objective = pcpca_contrastive_loglik(xc.as_matrix(), yc.as_matrix(), &m.loadings, m.sigma2, gamma).ok();
            diag.eigenvalues = Some(leading(&m.eigenvalues, d));
            diag.extra.insert("sigma2".into(), m.sigma2);
            let e = pcpca_transform(&m, xc.as_matrix())?;
            (e.values, Some(m.loadings), None)
        }
        Method::Clvm => {
            let k = shared_dim.min(fg.data.p().saturating_sub(d));
            let m = clvm_fit_em(&fg.data, &bg.data, k, d, &em)?;
            diag.objective = m.loglik_trace.last().copied();
            diag.iterations = Some(m.iterations);
            diag.converged = Some(m.converged);
            diag.extra.insert("k".into(), k as f64);
            diag.extra.insert("sigma2".into(), m.sigma2);
            let e = clvm_transform(&m, xc.as_matrix())?;
            (e.values, Some(m.salient), None)
        }
        Method::Cfpca => {
            let (cf, cb) = (fg.curves.as_ref(), bg.curves.as_ref());
            let (cf, cb) = cf.zip(cb).ok_or_else(|| CliError::Config("cfpca needs curve inputs".into()))?;
            let m = cfpca_fit(cf, cb, gamma, d)?;
            diag.objective = Some(m.eigenvalues.iter().take(d).sum());
            diag.eigenvalues = Some(leading(&m.eigenvalues, d));
            diag.extra.insert("weight".into(), m.weight);
            let e = cfpca_scores(&m, xc.as_matrix())?;
            (e.values, Some(m.eigenfunctions), None)
        }
        Method::Cir => {
            let (rx, ry) = fg
                .response
                .as_deref()
                .zip(bg.response.as_deref())
                .ok_or_else(|| CliError::Config("cir needs the response column in every input".into()))?;
            let opts = CirOptions {
                seed,
                ..CirOptions::default()
            };
            let m = cir_fit(&fg.data, rx, &bg.data, ry, gamma, d, &opts)?;
            diag.objective = m.objective_trace.last().copied();
            diag.iterations = Some(m.iterations);
            diag.converged = Some(m.converged);
            diag.extra.insert("slices_fg".into(), m.slices_fg as f64);
            diag.extra.insert("slices_bg".into(), m.slices_bg as f64);
            let e = cir_transform(&m, xc.as_matrix())?;
            (e.values, Some(m.loadings.into_inner()), None)
        }
        Method::Clr => {
            let r = fg
                .response
                .as_deref()
                .ok_or_else(|| CliError::Config("clr needs a foreground response".into()))?;
            let m = clr_fit(&fg.data, r, &bg.data, d, &em)?;
            diag.objective = m.loglik_trace.last().copied();
            diag.iterations = Some(m.iterations);
            diag.converged = Some(m.converged);
            diag.extra.insert("sigma2".into(), m.sigma2);
            diag.extra.insert("tau2".into(), m.tau2);
            let e = clr_transform(&m, xc.as_matrix())?;
            (e.values, Some(m.salient), None)
        }
    };
    Ok(FitOutput {
        embedding,
        loadings,
        diagnostics: diag,
        selected,
    })
}

/// Fits at every γ of `grid`; failures are recorded per point.
pub fn gamma_sweep(method: Method, prep: &Prepared, grid: &[f64], d: usize, shared_dim: usize, seed: u64) -> Vec<SweepPoint> {
    grid.iter()
        .map(|&gamma| match fit_method(method, prep, gamma, d, shared_dim, seed) {
            Ok(fit) => SweepPoint {
                gamma,
                objective: fit.diagnostics.objective,
                eigenvalues: fit.diagnostics.eigenvalues,
                error: None,
            },
            Err(e) => SweepPoint {
                gamma,
                objective: None,
                eigenvalues: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn stamp(cfg: &PipelineConfig) -> String {
    format!("config_hash={} seed={}", cfg.hash(), cfg.seed)
}

fn component_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("component_{j}")).collect()
}

fn dims_note(rule: DimRule) -> String {
    match rule {
        DimRule::Fixed(_) => "subspace dimensions fixed by configuration".into(),
        DimRule::VarianceThreshold(_) => "subspace dimensions chosen by a cumulative variance threshold; \
             noise directions can inflate them, so fix dim_rule when the spectrum has no clear gap"
            .into(),
    }
}

fn write_features(path: &Path, stamp: &str, features: &[SelectedFeature]) -> Result<()> {
    let io_err = |e| CliError::io(path, e);
    let mut text = format!("# {stamp}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut text);
        let csv_err = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
        w.write_record(["index", "name", "score"]).map_err(csv_err)?;
        for f in features {
            w.write_record([f.index.to_string(), f.name.clone(), crate::io::format_value(f.score)])
                .map_err(csv_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    std::fs::write(path, text).map_err(io_err)
}

fn write_plot_data(path: &Path, stamp: &str, embedding: &DMatrix<f64>) -> Result<()> {
    let io_err = |e| CliError::io(path, e);
    let mut text = format!("# {stamp}\nsample,component,value\n");
    for (i, row) in embedding.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            text.push_str(&format!("{i},{},{}\n", j + 1, crate::io::format_value(*v)));
        }
    }
    std::fs::write(path, text).map_err(io_err)
}

/// Runs the whole workflow and writes the artifacts. A stop after the
/// contrastive-dimension test is a normal return with
/// [`RunStatus::NoContrastiveSignal`].
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let prep = prepare(cfg)?;
    let (x, y) = (&prep.foreground.data, &prep.background.data);

    let t = Instant::now();
    let sx = estimate_subspace(x, cfg.dim_rule)?;
    let sy = estimate_subspace(y, cfg.dim_rule)?;
    let cde = cde_test(
        x,
        y,
        sx.dim,
        sy.dim,
        &CdeOptions {
            replicates: cfg.replicates,
            seed: cfg.seed,
            epsilon: cfg.epsilon_cde,
            threads: opts.threads.max(1),
            resampling: cfg.cde_resampling,
        },
    )?;
    let cde_ms = elapsed_ms(t);

    let mut report = RunReport {
        schema: SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        status: RunStatus::NoContrastiveSignal,
        message: Some(NO_SIGNAL_MESSAGE.into()),
        background_selection: prep.selection.clone(),
        subspace_dims: SubspaceDims {
            rule: cfg.dim_rule,
            d_x: sx.dim,
            d_y: sy.dim,
            variance_explained_x: sx.variance_explained,
            variance_explained_y: sy.variance_explained,
            note: dims_note(cfg.dim_rule),
        },
        cde,
        alpha: cfg.alpha,
        method_used: None,
        gamma: None,
        d_used: None,
        d_source: None,
        fit: None,
        gamma_sweep: None,
        selected_features: None,
        outputs: Vec::new(),
        timings_ms: Timings {
            load: prep.load_ms,
            background_selection: prep.selection_ms,
            cde: cde_ms,
            ..Timings::default()
        },
    };
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let report_path = cfg.output_dir.join(REPORT_FILE);

    if report.cde.p_value >= cfg.alpha {
        report.timings_ms.total = elapsed_ms(start);
        report.write(&report_path)?;
        return Ok(report);
    }

    let (d, source) = match cfg.d {
        Some(d) => (d, DimSource::User),
        None if report.cde.d_hat > 0 => (report.cde.d_hat.min(x.p()), DimSource::Estimated),
        None => (1, DimSource::Fallback),
    };
    let gamma = cfg.method.uses_gamma().then(|| cfg.gamma.unwrap_or(1.0));
    let shared_dim = cfg.shared_dim.unwrap_or(sy.dim);

    let t = Instant::now();
    let fit = fit_method(cfg.method, &prep, gamma.unwrap_or(0.0), d, shared_dim, cfg.seed)?;
    let sweep = match gamma {
        Some(_) if cfg.gamma.is_none() => Some(gamma_sweep(
            cfg.method,
            &prep,
            &default_gamma_grid(),
            d,
            shared_dim,
            cfg.seed,
        )),
        _ => None,
    };
    report.timings_ms.fit = elapsed_ms(t);

    let t = Instant::now();
    let stamp = stamp(cfg);
    let d_out = fit.embedding.ncols();
    save_matrix(&cfg.output_dir.join(EMBEDDINGS_FILE), &stamp, &component_names(d_out), &fit.embedding)?;
    report.outputs.push(OutputFile {
        kind: "embeddings".into(),
        path: EMBEDDINGS_FILE.into(),
        rows: fit.embedding.nrows(),
        cols: d_out,
    });
    if let Some(l) = &fit.loadings {
        save_matrix(&cfg.output_dir.join(LOADINGS_FILE), &stamp, &component_names(l.ncols()), l)?;
        report.outputs.push(OutputFile {
            kind: "loadings".into(),
            path: LOADINGS_FILE.into(),
            rows: l.nrows(),
            cols: l.ncols(),
        });
    }
    if let Some(features) = &fit.selected {
        write_features(&cfg.output_dir.join(FEATURES_FILE), &stamp, features)?;
        report.outputs.push(OutputFile {
            kind: "selected_features".into(),
            path: FEATURES_FILE.into(),
            rows: features.len(),
            cols: 3,
        });
    }
    if opts.emit_plot_data {
        write_plot_data(&cfg.output_dir.join(PLOT_FILE), &stamp, &fit.embedding)?;
        report.outputs.push(OutputFile {
            kind: "plot_data".into(),
            path: PLOT_FILE.into(),
            rows: fit.embedding.len(),
            cols: 3,
        });
    }
    report.timings_ms.write = elapsed_ms(t);

    report.status = RunStatus::Completed;
    report.message = None;
    report.method_used = Some(cfg.method.to_string());
    report.gamma = gamma;
    report.d_used = Some(d_out);
    report.d_source = Some(source);
    report.fit = Some(fit.diagnostics);
    report.gamma_sweep = sweep;
    report.selected_features = fit.selected;
    report.timings_ms.total = elapsed_ms(start);
    report.write(&report_path)?;
    Ok(report)
}
