//! CSV formats: matrices (one query per line, no header) and single-column vectors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::errors::{Error, Result};

/// Formats a value with at most 12 significant digits, `.` decimal, no exponent.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn parse_matrix_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: `{}`: {e}", i + 1, t.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {} has {} values, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(File::open(path)?)
}

pub fn write_matrix<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = BufWriter::new(out);
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_sig(v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix(File::create(path)?, m)
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() > 1 {
        return Err(Error::Parse(format!(
            "{}: expected a single column, found {}",
            path.display(),
            m.ncols()
        )));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

pub fn write_vector<W: Write>(out: W, v: &DVector<f64>) -> Result<()> {
    let mut out = BufWriter::new(out);
    for &x in v.iter() {
        writeln!(out, "{}", fmt_sig(x))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_vector(File::create(path)?, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_digits() {
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-0.5), "-0.5");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(5_320_000.0), "5320000");
        assert_eq!(fmt_sig(2f64.sqrt()), "1.41421356237");
    }

    #[test]
    fn matrix_csv_parses_and_rejects_ragged() {
        let m = parse_matrix_csv("1,0,0\n0, 1.5 ,0\n\n".as_bytes()).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m[(1, 1)], 1.5);
        assert!(parse_matrix_csv("1,0\n1\n".as_bytes()).is_err());
        assert!(parse_matrix_csv("1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_round_trip_keeps_twelve_digits() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2f64.sqrt(), -3.25, 1e-3]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let back = parse_matrix_csv(buf.as_slice()).unwrap();
        assert!((&back - &m).amax() < 1e-11);
    }
}
