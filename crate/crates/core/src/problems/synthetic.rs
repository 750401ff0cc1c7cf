//! Reproducible synthetic binary-classification data.

use rand::Rng;

use crate::rng::{Purpose, RngStream};
use crate::scalar::Scalar;

use super::SparseDataset;

/// `m` rows in `d` features drawn from two overlapping Gaussian classes.
///
/// Labels alternate in random order; feature `j` of a row with label `b` is
/// `0.5 * b * w_j + N(0, 1)` for a fixed random direction `w`. Entries whose
/// magnitude falls below 0.25 are dropped, so rows are genuinely sparse.
pub fn two_class<T: Scalar>(m: usize, d: usize, seed: u64) -> SparseDataset<T> {
    let stream = RngStream::new(seed, 0, Purpose::BatchNoise);
    let mut rng = stream.at(0);
    let direction: Vec<f64> = (0..d).map(|_| f64::standard_normal(&mut rng)).collect();
    let mut rows = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let b: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let row: Vec<(usize, T)> = direction
            .iter()
            .enumerate()
            .filter_map(|(j, &w)| {
                let v = 0.5 * b * w + f64::standard_normal(&mut rng);
                (v.abs() >= 0.25).then(|| (j, T::lit(v)))
            })
            .collect();
        rows.push(row);
        labels.push(T::lit(b));
    }
    SparseDataset::new(rows, labels, d).expect("generated rows satisfy dataset invariants")
}

/// Writes `data` in LibSVM text format with 17 significant digits.
pub fn to_libsvm_string<T: Scalar>(data: &SparseDataset<T>) -> String {
    let mut out = String::new();
    for (row, &b) in data.rows().iter().zip(data.labels()) {
        out.push_str(if b > T::zero() { "+1" } else { "-1" });
        for &(j, v) in row {
            out.push_str(&format!(" {}:{:.16e}", j + 1, v.to_f64_lossy()));
        }
        out.push('\n');
    }
    out
}
