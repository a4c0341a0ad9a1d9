//! Trajectories as CSV: header `c1,…,cD`, one row per time step.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::{CliError, Result};

/// Reads a CSV table into a `D × T` matrix (one column per row of the file).
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let d = reader.headers().map_err(|e| CliError::parse(path, e))?.len();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::parse(path, e))?;
        for field in record.iter() {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::parse(path, format!("row {}: not a number: {field:?}", row + 1)))?;
            values.push(v);
        }
    }
    let t = if d == 0 { 0 } else { values.len() / d };
    Ok(DMatrix::from_vec(d, t, values))
}

/// `c1,…,cD`.
pub fn header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("c{i}")).collect()
}

/// Shortest representation that parses back to the same value.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_matrix(path: &Path, data: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::parse(path, e))?;
    let to_err = |e: csv::Error| CliError::parse(path, e);
    w.write_record(header(data.nrows())).map_err(to_err)?;
    for col in data.column_iter() {
        w.write_record(col.iter().map(|&v| format_value(v))).map_err(to_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes rows of already formatted cells under the given header.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::parse(path, e))?;
    let to_err = |e: csv::Error| CliError::parse(path, e);
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// The `.csv` files of a directory, sorted by name.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// A single table, or every table of a directory.
pub fn read_series(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    if path.is_dir() {
        let files = csv_files(path)?;
        if files.is_empty() {
            return Err(CliError::Usage(format!("{} contains no .csv files", path.display())));
        }
        files.iter().map(|f| read_matrix(f)).collect()
    } else {
        Ok(vec![read_matrix(path)?])
    }
}
