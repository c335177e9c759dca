//! Numeric CSV and the `SFAM` binary matrix format.
//!
//! `SFAM` layout: magic `"SFAM"`, `rows: u32`, `cols: u32`, then `rows * cols`
//! little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MATRIX_MAGIC: &[u8; 4] = b"SFAM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// `.csv` means CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Binary,
        }
    }
}

/// Samples as rows, with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub values: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    pub provenance: String,
}

impl Dataset {
    /// Entries must be finite; labels must cover `0..=max` without gaps.
    pub fn new(values: DMatrix<f64>, labels: Option<Vec<usize>>, provenance: impl Into<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        if let Some(l) = &labels {
            if l.len() != values.nrows() {
                return Err(Error::invalid(format!(
                    "{} labels for {} rows",
                    l.len(),
                    values.nrows()
                )));
            }
            let classes = l.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; classes];
            l.iter().for_each(|&c| seen[c] = true);
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::invalid(format!(
                    "labels must be contiguous from 0; class {missing} is missing"
                )));
            }
        }
        Ok(Self {
            values,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }
}

/// Loads a dataset; `label_column` selects a CSV column holding integer class ids.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat, label_column: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let provenance = path.display().to_string();
    match format {
        DataFormat::Binary => {
            if label_column.is_some() {
                return Err(Error::invalid("binary matrices carry no label column"));
            }
            Dataset::new(load_matrix(path)?, None, provenance)
        }
        DataFormat::Csv => {
            let table = read_csv_table(path)?;
            let cols = table.ncols();
            let Some(lc) = label_column else {
                return Dataset::new(table, None, provenance);
            };
            if lc >= cols {
                return Err(Error::format(path, format!("label column {lc} out of range for {cols} columns")));
            }
            if cols < 2 {
                return Err(Error::format(path, "no feature columns besides the label column"));
            }
            let mut labels = Vec::with_capacity(table.nrows());
            for (i, &v) in table.column(lc).iter().enumerate() {
                if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                    return Err(Error::format(path, format!("row {i}: label {v} is not a class id")));
                }
                labels.push(v as usize);
            }
            let keep: Vec<usize> = (0..cols).filter(|&c| c != lc).collect();
            Dataset::new(table.select_columns(&keep), Some(labels), provenance)
        }
    }
}

/// Reads a numeric CSV; the first line is skipped when any field is not a number.
pub fn read_csv_table(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::format(path, format!("line {}: {e}", i + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    let cols = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::format(path, format!("data row {bad} has {} fields, expected {cols}", rows[bad].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Writes rows with 17 significant digits, optionally preceded by a header line.
pub fn write_csv(path: impl AsRef<Path>, m: &DMatrix<f64>, header: Option<&[&str]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{}", h.join(","))?;
    }
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "label")?;
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let table = read_csv_table(path)?;
    if table.ncols() != 1 {
        return Err(Error::format(path, "label file must have one column"));
    }
    table
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::format(path, format!("invalid label {v}")))
            }
        })
        .collect()
}

pub fn write_matrix<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::invalid("too many rows"))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::invalid("too many columns"))?;
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for row in m.row_iter() {
        for v in row.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R, source: &str) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::format(source, "missing SFAM header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 8 {
        return Err(Error::format(
            source,
            format!("{rows} x {cols} matrix needs {} bytes, found {}", rows * cols * 8, body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Saves as CSV or `SFAM` by file extension.
pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    match DataFormat::from_path(path) {
        DataFormat::Csv => write_csv(path, m, None),
        DataFormat::Binary => write_matrix(m, BufWriter::new(File::create(path)?)),
    }
}

/// Loads CSV or `SFAM` by file extension.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    match DataFormat::from_path(path) {
        DataFormat::Csv => read_csv_table(path),
        DataFormat::Binary => read_matrix(BufReader::new(File::open(path)?), &path.display().to_string()),
    }
}
