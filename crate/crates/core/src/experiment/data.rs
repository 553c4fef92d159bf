//! Synthetic sine data and dataset CSV files.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, io_error, Result};
use crate::linalg::Dataset;

/// `n` evenly spaced points on `[0, 1]` with targets `sin(2πx) + ε`,
/// `ε ~ N(0, σ²)` drawn from one ChaCha20 stream seeded with `seed`.
pub fn generate_sine(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid("sine dataset needs at least two points"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("noise sigma must be nonnegative, got {sigma}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            (2.0 * PI * xi).sin() + sigma * noise
        })
        .collect();
    Dataset::from_columns(&x, &y)
}

/// Shortest text that reads back as the same `f64`: 17 significant digits in
/// scientific notation, `inf`/`-inf` for infinities.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| io_error(path, e))
}

/// Writes one row per sample; input columns `x` (or `x1 … xd`) then `y`.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = if data.dim() == 1 {
        vec!["x".to_string()]
    } else {
        (1..=data.dim()).map(|i| format!("x{i}")).collect()
    };
    header.push("y".to_string());
    w.write_record(&header).map_err(|e| io_error(path, e))?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.row(i).into_iter().map(format_float).collect();
        row.push(format_float(data.targets()[i]));
        w.write_record(&row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Reads a dataset CSV: a header row, at least one input column, and a final
/// column named `y`.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_error(path, e))?;
    let headers = r.headers().map_err(|e| io_error(path, e))?.clone();
    if headers.len() < 2 || headers.get(headers.len() - 1) != Some("y") {
        return Err(invalid(format!(
            "{}: expected input columns followed by a final `y` column",
            path.display()
        )));
    }
    let cols = headers.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| io_error(path, e))?;
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{}: row {}: bad number {field:?}", path.display(), i + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(invalid(format!("{}: no data rows", path.display())));
    }
    let table = DMatrix::from_row_slice(rows, cols, &values);
    let inputs = table.columns(0, cols - 1).into_owned();
    let targets = DVector::from_iterator(rows, table.column(cols - 1).iter().copied());
    Dataset::new(inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_sine() {
        let d = generate_sine(5, 0.0, 3).unwrap();
        assert_eq!(d.targets()[1], 1.0);
        assert_eq!(d.targets()[0], 0.0);
    }

    #[test]
    fn grid_of_eleven() {
        let d = generate_sine(11, 0.5, 0).unwrap();
        for i in 0..11 {
            assert_eq!(d.inputs()[(i, 0)], i as f64 / 10.0);
        }
        assert_eq!(d.inputs()[(1, 0)], 0.1);
    }

    #[test]
    fn seed_determinism() {
        assert_eq!(generate_sine(11, 0.5, 9).unwrap(), generate_sine(11, 0.5, 9).unwrap());
        assert_ne!(generate_sine(11, 0.5, 9).unwrap(), generate_sine(11, 0.5, 10).unwrap());
    }

    #[test]
    fn float_format() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(f64::INFINITY), "inf");
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.12345679, 0.0] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(generate_sine(1, 0.5, 0).is_err());
        assert!(generate_sine(4, -1.0, 0).is_err());
    }
}
