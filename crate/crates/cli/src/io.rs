//! Matrix file ingestion and trace/table emission.
//!
//! Dense CSV: comma-separated numeric rows, optional single header line.
//! Triplet CSV: header `row,col,value`, 0-based indices, duplicates summed,
//! omitted entries zero. All numeric output uses shortest round-trip
//! decimal formatting, so written values reload bit-exactly and files are
//! diffable across runs. Writes go through a temp file and rename.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rnmf_core::linalg::{Matrix, Vector};
use rnmf_core::nmf::TraceRecord;
use rnmf_core::qp::QpTraceRecord;

use crate::error::{CliError, Result};

/// On-disk matrix layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatrixFormat {
    #[default]
    Dense,
    Triplet,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn parse_field(tok: &str) -> Option<f64> {
    let v: f64 = tok.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Load a matrix from `path`. `shape` declares (rows, cols) for the
/// triplet format; when absent the shape is inferred from the largest
/// indices present. Dense files ignore `shape`.
pub fn load_matrix(
    path: &Path,
    format: MatrixFormat,
    shape: Option<(usize, usize)>,
) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    match format {
        MatrixFormat::Dense => load_dense(path, &text),
        MatrixFormat::Triplet => load_triplet(path, &text, shape),
    }
}

fn load_dense(path: &Path, text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|t| parse_field(t)).collect();
        let row = match parsed {
            Some(row) => row,
            None if rows.is_empty() && width.is_none() => {
                // A single non-numeric first line is a header.
                width = Some(fields.len());
                continue;
            }
            None => {
                return Err(parse_err(path, line_no, "expected comma-separated finite numbers"));
            }
        };
        if let Some(w) = width {
            if row.len() != w {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("ragged row: {} fields, expected {w}", row.len()),
                ));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no numeric rows found"));
    }
    Ok(Matrix::from_rows(&rows)?)
}

fn load_triplet(path: &Path, text: &str, shape: Option<(usize, usize)>) -> Result<Matrix> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim().eq_ignore_ascii_case("row,col,value") => {}
        _ => {
            return Err(parse_err(path, 1, "triplet file must start with header row,col,value"));
        }
    }
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut max_row = 0usize;
    let mut max_col = 0usize;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, line_no, "expected row,col,value"));
        }
        let row: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, "row index must be a non-negative integer"))?;
        let col: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, "col index must be a non-negative integer"))?;
        let value = parse_field(fields[2])
            .ok_or_else(|| parse_err(path, line_no, "value must be a finite number"))?;
        max_row = max_row.max(row);
        max_col = max_col.max(col);
        entries.push((row, col, value));
    }
    if entries.is_empty() && shape.is_none() {
        return Err(parse_err(path, 1, "empty triplet file with no declared shape"));
    }
    let (rows, cols) = shape.unwrap_or((max_row + 1, max_col + 1));
    if rows == 0 || cols == 0 {
        return Err(CliError::Validation("declared shape must be positive".into()));
    }
    let mut m = Matrix::zeros(rows, cols);
    for (r, c, v) in entries {
        if r >= rows || c >= cols {
            return Err(CliError::Validation(format!(
                "triplet index ({r}, {c}) outside declared shape {rows}x{cols}"
            )));
        }
        m[(r, c)] += v;
    }
    Ok(m)
}

/// Load a vector: a dense file with a single row or a single column.
pub fn load_vector(path: &Path) -> Result<Vector> {
    let m = load_matrix(path, MatrixFormat::Dense, None)?;
    if m.rows() != 1 && m.cols() != 1 {
        return Err(CliError::Validation(format!(
            "{} is {}x{}, expected a single row or column",
            path.display(),
            m.rows(),
            m.cols()
        )));
    }
    Ok(Vector::new(m.data().to_vec())?)
}

/// Write `contents` to `path` through a temp file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = tmp
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "out".into());
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &matrix_to_csv(m))
}

pub fn save_vector(path: &Path, v: &Vector) -> Result<()> {
    let mut out = String::new();
    for x in v.data() {
        let _ = writeln!(out, "{x}");
    }
    write_atomic(path, &out)
}

/// One row of the stable trace schema
/// `iter,objective,frob_error,alpha_l,alpha_r,clipped_count`; cells not
/// applicable to the producing method stay empty.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub frob_error: Option<f64>,
    pub alpha_l: Option<f64>,
    pub alpha_r: Option<f64>,
    pub clipped_count: Option<usize>,
}

impl From<&TraceRecord> for TraceRow {
    fn from(t: &TraceRecord) -> Self {
        TraceRow {
            iter: t.iter,
            objective: t.objective,
            frob_error: Some(t.frob_error),
            alpha_l: t.alpha_l,
            alpha_r: t.alpha_r,
            clipped_count: t.clipped_count,
        }
    }
}

impl From<&QpTraceRecord> for TraceRow {
    fn from(t: &QpTraceRecord) -> Self {
        TraceRow {
            iter: t.iter,
            objective: t.objective,
            frob_error: None,
            alpha_l: t.alpha,
            alpha_r: None,
            clipped_count: None,
        }
    }
}

pub fn trace_to_csv<'a, I, T>(records: I) -> String
where
    I: IntoIterator<Item = &'a T>,
    T: 'a,
    TraceRow: From<&'a T>,
{
    let mut out = String::from("iter,objective,frob_error,alpha_l,alpha_r,clipped_count\n");
    for rec in records {
        let row = TraceRow::from(rec);
        let _ = write!(out, "{},{}", row.iter, row.objective);
        match row.frob_error {
            Some(v) => {
                let _ = write!(out, ",{v}");
            }
            None => out.push(','),
        }
        match row.alpha_l {
            Some(v) => {
                let _ = write!(out, ",{v}");
            }
            None => out.push(','),
        }
        match row.alpha_r {
            Some(v) => {
                let _ = write!(out, ",{v}");
            }
            None => out.push(','),
        }
        match row.clipped_count {
            Some(v) => {
                let _ = write!(out, ",{v}");
            }
            None => out.push(','),
        }
        out.push('\n');
    }
    out
}

/// Flat `key value` lines.
pub fn key_values_to_text(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} {v}");
    }
    out
}
