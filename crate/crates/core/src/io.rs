//! Headerless numeric CSV: one matrix row per line.
//!
//! Values are written with 17 significant digits so that every `f64`
//! survives a write/read round trip bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Parses CSV text into a dense matrix. Line and column numbers in errors are
/// 1-based.
pub fn parse_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, 0, e.to_string())
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(parse_error(
                    path,
                    line,
                    record.len().min(w) + 1,
                    format!("ragged row: expected {w} fields, found {}", record.len()),
                ));
            }
            _ => {}
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(path, line, k + 1, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, k + 1, format!("non-finite value {field:?}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = width.ok_or_else(|| parse_error(path, 1, 1, "empty matrix"))?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row lengths checked"))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, path)
}

/// Reads a vector stored as a single row or a single column.
pub fn read_vector(path: impl AsRef<Path>) -> Result<Array1<f64>> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    match m.dim() {
        (1, _) | (_, 1) => Ok(Array1::from_iter(m.iter().copied())),
        (r, c) => Err(parse_error(path, 1, 1, format!("expected a single row or column, found {r}x{c}"))),
    }
}

/// Reads nonnegative integer counts. Errors name the offending row and column.
pub fn read_counts(path: impl AsRef<Path>) -> Result<Array2<u64>> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    let mut out = Array2::zeros(m.dim());
    for ((i, j), &v) in m.indexed_iter() {
        if v < 0.0 {
            return Err(parse_error(path, i + 1, j + 1, format!("negative count {v} at row {}, column {}", i + 1, j + 1)));
        }
        if v.fract() != 0.0 || v > u64::MAX as f64 {
            return Err(parse_error(path, i + 1, j + 1, format!("count {v} is not a nonnegative integer")));
        }
        out[[i, j]] = v as u64;
    }
    Ok(out)
}

pub fn format_matrix(m: ArrayView2<'_, f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24);
    for row in m.rows() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, m: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_matrix(m)).map_err(|e| Error::io(path, e))
}

/// Writes a vector as a single column.
pub fn write_vector(path: impl AsRef<Path>, v: ArrayView1<'_, f64>) -> Result<()> {
    let col = v.insert_axis(ndarray::Axis(1));
    write_matrix(path, col)
}
