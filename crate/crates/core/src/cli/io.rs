//! Plain matrix files: headerless CSV (rows = observations) or IDX images.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gan::parse_idx_images;

const IDX_MAGIC: [u8; 4] = [0, 0, 8, 3];

/// Fixed 17-significant-digit rendering used for every number the CLI writes.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_csv(text: &str, skip_header: bool) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate().skip(usize::from(skip_header)) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::input(format!("line {}: cannot parse '{}' as a number", lineno + 1, field.trim()))
            })?;
            values.push(v);
        }
        let width = values.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::input(format!("line {}: expected {c} columns, found {width}", lineno + 1)));
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::input("no data rows"))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("row widths checked"))
}

pub fn read_csv(path: &Path, skip_header: bool) -> Result<Array2<f64>> {
    parse_csv(&fs::read_to_string(path)?, skip_header)
}

/// CSV, or IDX when the file starts with the unsigned-byte image magic.
pub fn read_matrix(path: &Path, skip_header: bool) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&IDX_MAGIC) {
        return parse_idx_images(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::input(format!("{} is neither CSV nor IDX", path.display())))?;
    parse_csv(&text, skip_header)
}

pub fn matrix_csv(x: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in x.rows() {
        let fields: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    out
}

/// Write `contents`, creating parent directories as needed.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip_is_exact() {
        let x = array![[0.1, -2.5e-300], [1.0 / 3.0, 7.0]];
        assert_eq!(parse_csv(&matrix_csv(&x), false).unwrap(), x);
    }

    #[test]
    fn header_and_blank_lines() {
        let x = parse_csv("a,b\n1, 2\n\n3,4\n", true).unwrap();
        assert_eq!(x, array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn ragged_and_garbage_rows_fail() {
        assert!(parse_csv("1,2\n3\n", false).is_err());
        let err = parse_csv("1,2\nx,4\n", false).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_csv("\n\n", false).is_err());
    }

    #[test]
    fn idx_is_detected_by_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        crate::gan::write_idx_images(&path, &[0, 255, 51, 0], 1, 2, 2).unwrap();
        assert_eq!(read_matrix(&path, false).unwrap(), array![[0.0, 1.0, 0.2, 0.0]]);
    }

    #[test]
    fn fixed_format() {
        assert_eq!(fmt_num(0.0), "0.0000000000000000e0");
        assert_eq!(fmt_num(-1.5), "-1.5000000000000000e0");
    }
}
