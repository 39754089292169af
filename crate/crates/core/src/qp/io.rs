//! Plain CSV storage for dense matrices: one row per line, no header.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for record in r.records() {
        let record = record?;
        if *ncols.get_or_insert(record.len()) != record.len() {
            return Err(Error::Dimension {
                context: "matrix csv row length",
                expected: ncols.unwrap_or(0),
                got: record.len(),
            });
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Config {
                path: path.to_path_buf(),
                message: format!("not a number: `{field}`"),
            })?;
            data.push(v);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols.unwrap_or(0), &data))
}
