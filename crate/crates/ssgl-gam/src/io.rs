//! CSV is the sole data interchange: header row, UTF-8, '.' decimal,
//! shortest round-trip float formatting. Errors name the offending
//! file, row, and column.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Parsed CSV: header names plus an all-numeric row-major body.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty file", path.display())))?;
    let headers: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    if headers.iter().any(String::is_empty) {
        return Err(Error::data(format!(
            "{}: empty column name in header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != headers.len() {
            return Err(Error::data(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                lineno + 1,
                cells.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(cells.len());
        for (ci, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::data(format!(
                    "{}: non-numeric cell '{}' at row {}, column {} ({})",
                    path.display(),
                    cell.trim(),
                    lineno + 1,
                    ci + 1,
                    headers[ci]
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    Ok(Table { headers, rows })
}

/// Read a modeling CSV with header `y,x1,...,xp`.
pub fn read_xy_csv(path: &Path) -> Result<(Vec<f64>, Mat)> {
    let t = read_table(path)?;
    if t.headers.first().map(String::as_str) != Some("y") {
        return Err(Error::data(format!(
            "{}: first column must be named 'y', found '{}'",
            path.display(),
            t.headers.first().map(String::as_str).unwrap_or("")
        )));
    }
    if t.headers.len() < 2 {
        return Err(Error::data(format!(
            "{}: no covariate columns after 'y'",
            path.display()
        )));
    }
    let n = t.rows.len();
    let p = t.headers.len() - 1;
    let y: Vec<f64> = t.rows.iter().map(|r| r[0]).collect();
    let x = Mat::from_fn(n, p, |i, j| t.rows[i][j + 1]);
    Ok((y, x))
}

/// Covariate matrix, tolerating (and dropping) a leading `y` column so
/// training files can double as prediction inputs.
pub fn read_x_csv(path: &Path) -> Result<Mat> {
    let t = read_table(path)?;
    let skip = usize::from(t.headers.first().map(String::as_str) == Some("y"));
    let p = t.headers.len() - skip;
    if p == 0 {
        return Err(Error::data(format!(
            "{}: no covariate columns",
            path.display()
        )));
    }
    Ok(Mat::from_fn(t.rows.len(), p, |i, j| t.rows[i][j + skip]))
}

/// Format a float so it parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv(path: &Path, headers: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&headers.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_xy_csv(path: &Path, y: &[f64], x: &Mat) -> Result<()> {
    let mut headers = vec!["y".to_string()];
    headers.extend((1..=x.ncols()).map(|j| format!("x{j}")));
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .map(|i| {
            let mut r = Vec::with_capacity(1 + x.ncols());
            r.push(y[i]);
            for j in 0..x.ncols() {
                r.push(x.get(i, j));
            }
            r
        })
        .collect();
    write_csv(path, &header_refs, &rows)
}

pub fn write_string(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_xy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let y = vec![1.0, 0.0, 1.0];
        let x = Mat::from_fn(3, 2, |i, j| (i * 2 + j) as f64 / 7.0 + 0.123456789012345);
        write_xy_csv(&path, &y, &x).unwrap();
        let (y2, x2) = read_xy_csv(&path).unwrap();
        assert_eq!(y, y2);
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(x.get(i, j).to_bits(), x2.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn non_numeric_cell_names_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "y,x1\n1,0.5\n0,oops\n").unwrap();
        let err = read_xy_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3"), "{msg}");
        assert!(msg.contains("x1"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn ragged_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "y,x1,x2\n1,0.5\n").unwrap();
        assert!(read_xy_csv(&path).is_err());
    }

    #[test]
    fn x_reader_skips_y() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "y,x1,x2\n1,0.25,0.75\n").unwrap();
        let x = read_x_csv(&path).unwrap();
        assert_eq!(x.ncols(), 2);
        assert_eq!(x.get(0, 0), 0.25);
    }

    #[test]
    fn fmt_roundtrips_bits() {
        for &v in &[0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-17, -2.5e300] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits());
        }
    }
}
