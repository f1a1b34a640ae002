//! CSV matrices: comma-separated, `.` decimal point, LF line endings and an
//! optional single header row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CsvMatrix {
    pub header: Option<Vec<String>>,
    pub matrix: Matrix,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

/// Values are written in the shortest form that parses back to the same
/// `f64`, so a binary → CSV → binary round trip is exact.
pub fn write_csv<W: Write>(w: W, m: &Matrix, header: Option<&[String]>) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    if let Some(h) = header {
        if h.len() != m.cols() {
            return Err(Error::Argument(format!(
                "header has {} names for {} columns",
                h.len(),
                m.cols()
            )));
        }
        out.write_record(h).map_err(csv_err)?;
    }
    for row in m.iter_rows() {
        out.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// The first row is taken as a header when any of its fields is not a
/// number. Rows are numbered from 1 in error messages, counting the header.
pub fn read_csv<R: Read>(r: R) -> Result<CsvMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut header = None;
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 1;
        let parsed: Vec<Option<f64>> = rec.iter().map(|f| f.parse::<f64>().ok()).collect();
        if i == 0 && parsed.iter().any(Option::is_none) {
            header = Some(rec.iter().map(str::to_string).collect::<Vec<_>>());
            cols = Some(rec.len());
            continue;
        }
        let expected = *cols.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::Format(format!(
                "row {line} has {} fields, expected {expected}",
                rec.len()
            )));
        }
        for (j, (v, raw)) in parsed.iter().zip(rec.iter()).enumerate() {
            match v {
                Some(x) if x.is_finite() => data.push(*x),
                _ => {
                    return Err(Error::Format(format!(
                        "row {line}, column {}: '{raw}' is not a finite number",
                        j + 1
                    )))
                }
            }
        }
        rows += 1;
    }
    let cols = if rows == 0 { header.as_ref().map_or(0, Vec::len) } else { cols.unwrap_or(0) };
    let matrix = Matrix::new(rows, cols, data).map_err(|e| Error::Format(e.to_string()))?;
    Ok(CsvMatrix { header, matrix })
}

pub fn save_csv(path: impl AsRef<Path>, m: &Matrix, header: Option<&[String]>) -> Result<()> {
    write_csv(File::create(path)?, m, header)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<CsvMatrix> {
    read_csv(File::open(path)?)
}
