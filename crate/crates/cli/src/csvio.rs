//! Numeric CSV ingestion and emission.
//!
//! Files are comma separated with `.` as decimal mark. A header line is
//! optional: the first record counts as a header when any of its fields
//! fails to parse as a number.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use hdht_core::numkit::{Matrix, Vector};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub values: Matrix,
}

pub fn read_matrix(path: &Path) -> Result<Table, CliError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(file);
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        let line = i + 1;
        if i == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(CliError::Input(format!("{name}: missing value at line {line}, column {}", j + 1)));
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::Input(format!("{name}: cannot parse '{field}' at line {line}, column {}", j + 1))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("{name}: non-finite value at line {line}, column {}", j + 1)));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{name}: no data rows")));
    }
    let cols = rows[0].len();
    if let Some(h) = &header {
        if h.len() != cols {
            return Err(CliError::Input(format!("{name}: header has {} fields but rows have {cols}", h.len())));
        }
    }
    let values = Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    Ok(Table { header, values })
}

/// A single-column file read as a vector.
pub fn read_vector(path: &Path) -> Result<Vector, CliError> {
    let t = read_matrix(path)?;
    if t.values.ncols() != 1 {
        return Err(CliError::Input(format!(
            "{}: expected a single column, found {}",
            path.display(),
            t.values.ncols()
        )));
    }
    Ok(t.values.column(0).clone_owned())
}

/// Writes with the shortest representation that reads back exactly.
pub fn write_matrix(path: &Path, header: Option<&[String]>, m: &Matrix) -> Result<(), CliError> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(out.as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
