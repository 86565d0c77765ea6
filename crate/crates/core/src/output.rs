//! CSV and JSON writers for run directories.
//!
//! Space–time CSV layout: the first row is `x` followed by the cell centres,
//! every further row is `t` followed by one value per cell. Floats are written
//! with 17 significant digits so files round-trip bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn space_time_csv(centers: &[f64], times: &[f64], rows: &[Vec<f64>]) -> String {
    let mut s = String::with_capacity((rows.len() + 1) * (centers.len() + 1) * 24);
    s.push('x');
    for &x in centers {
        s.push(',');
        s.push_str(&fmt_f64(x));
    }
    s.push('\n');
    for (t, row) in times.iter().zip(rows) {
        s.push_str(&fmt_f64(*t));
        for &v in row {
            s.push(',');
            s.push_str(&fmt_f64(v));
        }
        s.push('\n');
    }
    s
}

/// Parses a space–time CSV back into centres, times and rows.
pub fn parse_space_time_csv(text: &str) -> Option<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines.next()?;
    let mut cells = header.split(',');
    if cells.next()? != "x" {
        return None;
    }
    let centers: Vec<f64> = cells.map(|c| c.parse().ok()).collect::<Option<_>>()?;
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let vals: Vec<f64> = line.split(',').map(|c| c.parse().ok()).collect::<Option<_>>()?;
        if vals.len() != centers.len() + 1 {
            return None;
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Some((centers, times, rows))
}

/// Plain CSV with a header row.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

/// Appends `key: value` lines.
pub fn summary_lines(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}: {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_bits() {
        let c = vec![0.005, 0.015, 1.0 / 3.0];
        let t = vec![0.0, 0.1 + 0.2];
        let rows = vec![vec![0.1, 0.2, 0.7], vec![1e-300, -0.0, std::f64::consts::PI]];
        let text = space_time_csv(&c, &t, &rows);
        let (c2, t2, r2) = parse_space_time_csv(&text).unwrap();
        assert_eq!(c2, c);
        assert_eq!(t2, t);
        assert_eq!(r2, rows);
        assert!(text.starts_with("x,5.0000000000000001e-3,"));
    }
}
