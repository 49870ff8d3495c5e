//! Plot-ready CSV files. Floats are written with 17 significant digits.

use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;

use crate::error::{invalid, Error, Result};
use crate::forward::{Part, SyntheticData};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_part(s: &str) -> Result<Part> {
    match s {
        "re" => Ok(Part::Re),
        "im" => Ok(Part::Im),
        other => Err(invalid(format!("unknown data part '{other}'"))),
    }
}

/// One real data entry as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub kappa: f64,
    /// Measurement coordinate.
    pub x: f64,
    pub part: Part,
    pub clean: f64,
    pub noisy: f64,
    pub corrupted: bool,
}

#[derive(Deserialize)]
struct RawDataRow {
    kappa: f64,
    x: f64,
    part: String,
    clean: f64,
    noisy: f64,
    corrupted: u8,
}

/// Writes `kappa,x,part,clean,noisy,corrupted`, one line per real entry.
pub fn write_data_csv(path: &Path, rows: &[DataRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kappa", "x", "part", "clean", "noisy", "corrupted"])?;
    for r in rows {
        w.write_record([
            fmt_f64(r.kappa),
            fmt_f64(r.x),
            r.part.as_str().to_string(),
            fmt_f64(r.clean),
            fmt_f64(r.noisy),
            u8::from(r.corrupted).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_data_csv(path: &Path) -> Result<Vec<DataRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for raw in reader.deserialize() {
        let raw: RawDataRow = raw?;
        rows.push(DataRow {
            kappa: raw.kappa,
            x: raw.x,
            part: parse_part(&raw.part)?,
            clean: raw.clean,
            noisy: raw.noisy,
            corrupted: raw.corrupted != 0,
        });
    }
    if rows.is_empty() {
        return Err(invalid(format!("data file {} has no rows", path.display())));
    }
    Ok(rows)
}

/// Splits rows back into vectors.
pub fn rows_to_synthetic(rows: &[DataRow]) -> SyntheticData {
    SyntheticData {
        clean: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.clean)),
        noisy: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.noisy)),
        corrupted: rows.iter().map(|r| r.corrupted).collect(),
    }
}

/// Writes named equal-length columns.
pub fn write_columns(path: &Path, names: &[&str], columns: &[&[f64]]) -> Result<()> {
    if names.len() != columns.len() {
        return Err(Error::DimensionMismatch {
            what: "csv column names",
            expected: columns.len(),
            got: names.len(),
        });
    }
    let n = columns.first().map_or(0, |c| c.len());
    if let Some(bad) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "csv column length",
            expected: n,
            got: bad.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for i in 0..n {
        w.write_record(columns.iter().map(|c| fmt_f64(c[i])))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file produced by [`write_columns`].
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record?;
        for (c, field) in columns.iter_mut().zip(record.iter()) {
            c.push(
                field
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad number '{field}' in {}: {e}", path.display())))?,
            );
        }
    }
    Ok((names, columns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips_exactly() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn data_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let rows = vec![
            DataRow {
                kappa: 0.5,
                x: 0.0,
                part: Part::Re,
                clean: 0.1,
                noisy: 0.1 + 1e-3,
                corrupted: false,
            },
            DataRow {
                kappa: 0.5,
                x: 1.0,
                part: Part::Im,
                clean: -2.0 / 3.0,
                noisy: 0.25,
                corrupted: true,
            },
        ];
        write_data_csv(&path, &rows).unwrap();
        assert_eq!(read_data_csv(&path).unwrap(), rows);
        let s = rows_to_synthetic(&rows);
        assert_eq!(s.noisy[1], 0.25);
        assert_eq!(s.corrupted, vec![false, true]);
    }

    #[test]
    fn columns_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let a = [1.0, 2.0];
        let b = [0.3, -4e-9];
        write_columns(&path, &["a", "b"], &[&a, &b]).unwrap();
        let (names, cols) = read_columns(&path).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(cols, vec![a.to_vec(), b.to_vec()]);
        assert!(write_columns(&path, &["a"], &[&a, &b]).is_err());
        assert!(write_columns(&path, &["a", "b"], &[&a, &b[..1]]).is_err());
    }
}
