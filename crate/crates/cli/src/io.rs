//! CSV ingestion and output. Rows are samples; lines starting with `#` are
//! comments.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use contrastkit::structured::CurveSet;
use contrastkit::DataMatrix;
use nalgebra::DMatrix;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub data: DataMatrix,
    pub response: Option<Vec<f64>>,
    /// Feature names (the response column excluded).
    pub names: Vec<String>,
}

struct RawCsv {
    header: Option<Vec<String>>,
    /// Values with the file line each row came from.
    rows: Vec<(u64, Vec<f64>)>,
}

fn read_raw(path: &Path, has_header: bool) -> Result<RawCsv> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(parse_err(line, format!("expected {w} fields, found {}", rec.len())));
            }
            _ => {}
        }
        if has_header && header.is_none() {
            header = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        let values = rec
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("column {}: `{cell}` is not a number", col + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, values));
    }
    Ok(RawCsv { header, rows })
}

/// Loads a numeric table. With `response_column` the named column is split
/// off as the response; a missing column is an error.
pub fn load_csv(path: &Path, has_header: bool, response_column: Option<&str>) -> Result<Table> {
    load_table(path, has_header, response_column, true)
}

/// Like [`load_csv`], but with `required = false` a missing response column
/// just yields no response.
pub fn load_table(path: &Path, has_header: bool, response_column: Option<&str>, required: bool) -> Result<Table> {
    let raw = read_raw(path, has_header)?;
    let width = raw
        .rows
        .first()
        .map(|r| r.1.len())
        .or_else(|| raw.header.as_ref().map(Vec::len))
        .unwrap_or(0);
    let mut names = raw
        .header
        .unwrap_or_else(|| (0..width).map(|j| format!("x{j}")).collect());
    let response_idx = match response_column {
        Some(name) => match names.iter().position(|n| n == name) {
            Some(i) => Some(i),
            None if required => {
                return Err(CliError::Config(format!("{}: no column named `{name}`", path.display())))
            }
            None => None,
        },
        None => None,
    };
    let n = raw.rows.len();
    let p = width - usize::from(response_idx.is_some());
    let mut m = DMatrix::zeros(n, p);
    let mut response = response_idx.map(|_| Vec::with_capacity(n));
    for (i, (_, row)) in raw.rows.iter().enumerate() {
        let mut j = 0;
        for (col, &v) in row.iter().enumerate() {
            if Some(col) == response_idx {
                response.as_mut().expect("response column").push(v);
            } else {
                m[(i, j)] = v;
                j += 1;
            }
        }
    }
    if let Some(idx) = response_idx {
        names.remove(idx);
    }
    let data = DataMatrix::new(m).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(Table { data, response, names })
}

/// Loads curves: the first data row is the time grid, every later row one
/// curve.
pub fn load_curves(path: &Path, has_header: bool) -> Result<CurveSet> {
    let raw = read_raw(path, has_header)?;
    let mut rows = raw.rows.into_iter();
    let (_, grid) = rows
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: no time grid row", path.display())))?;
    let curves: Vec<Vec<f64>> = rows.map(|r| r.1).collect();
    let values = DMatrix::from_fn(curves.len(), grid.len(), |i, j| curves[i][j]);
    CurveSet::new(grid, values).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Formats with 17 significant digits, enough to round-trip any f64.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a matrix with a `#` stamp line and a header row.
pub fn save_matrix(path: &Path, stamp: &str, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    let io_err = |e| CliError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(w, "# {stamp}").map_err(io_err)?;
    writeln!(w, "{}", names.join(",")).map_err(io_err)?;
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes a curve file: grid row first, then one row per curve.
pub fn save_curves(path: &Path, stamp: &str, grid: &[f64], m: &DMatrix<f64>) -> Result<()> {
    let mut all = DMatrix::zeros(m.nrows() + 1, m.ncols());
    all.row_mut(0).copy_from_slice(grid);
    all.rows_mut(1, m.nrows()).copy_from(m);
    let names: Vec<String> = (0..m.ncols()).map(|j| format!("t{j}")).collect();
    save_matrix(path, stamp, &names, &all)
}
