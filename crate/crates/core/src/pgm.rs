//! Portable grayscale (PGM, P5) rendering and CSV twins for matrices, so
//! heatmaps are inspectable without any plotting stack.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::radar::Periodogram;

/// Write a matrix as an 8-bit PGM, mapping `[lo, hi]` linearly to 0..255
/// (values outside the range are clipped).
pub fn write_pgm(path: &Path, data: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let (rows, cols) = data.dim();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "P5\n{cols} {rows}\n255\n").map_err(io)?;
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let mut bytes = Vec::with_capacity(rows * cols);
    for v in data.iter() {
        let t = ((v - lo) / span).clamp(0.0, 1.0);
        bytes.push((t * 255.0).round() as u8);
    }
    w.write_all(&bytes).map_err(io)?;
    w.flush().map_err(io)
}

/// Write a matrix as plain CSV (one row per line).
pub fn write_matrix_csv(path: &Path, data: &Array2<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for row in data.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Power of a periodogram in dB: `10 log10(|P|^2)`, floored well below any
/// signal of interest.
pub fn power_db(p: &Periodogram) -> Array2<f64> {
    p.values.mapv(|z| 10.0 * (z.norm_sqr().max(1e-300)).log10())
}

/// Render a periodogram heatmap (PGM plus CSV twin). The gray scale spans
/// the top `dynamic_range_db` decibels below the peak.
pub fn render_periodogram(
    pgm_path: &Path,
    csv_path: &Path,
    p: &Periodogram,
    dynamic_range_db: f64,
) -> Result<()> {
    let db = power_db(p);
    let peak = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    write_pgm(pgm_path, &db, peak - dynamic_range_db, peak)?;
    write_matrix_csv(csv_path, &db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn pgm_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let data = arr2(&[[0.0, 0.5], [1.0, 2.0]]);
        write_pgm(&path, &data, 0.0, 1.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 255]);
    }

    #[test]
    fn csv_twin_round_trips_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let data = arr2(&[[1.5, -2.25], [0.0, 1e-9]]);
        write_matrix_csv(&path, &data).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Vec<Vec<f64>> = text
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(parsed[0][1], -2.25);
        assert_eq!(parsed[1][1], 1e-9);
    }
}
