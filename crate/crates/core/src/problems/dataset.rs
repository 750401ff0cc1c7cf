//! Sparse binary-classification data and the LibSVM text format.
//!
//! ```text
//! +1 3:0.5 7:1.0
//! -1 1:2 4:-0.25   # trailing comments are ignored
//! ```
//!
//! Feature indices are 1-based in the file and 0-based in memory.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseDataset<T> {
    rows: Vec<Vec<(usize, T)>>,
    labels: Vec<T>,
    d: usize,
}

impl<T: Scalar> SparseDataset<T> {
    /// Builds a dataset, checking that indices are strictly increasing and
    /// below `d` and that every label is `-1` or `+1`.
    pub fn new(rows: Vec<Vec<(usize, T)>>, labels: Vec<T>, d: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            for w in row.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::invalid(format!(
                        "row {r}: feature indices not strictly increasing"
                    )));
                }
            }
            if let Some(&(idx, _)) = row.last() {
                if idx >= d {
                    return Err(Error::invalid(format!(
                        "row {r}: feature index {idx} out of range for d = {d}"
                    )));
                }
            }
        }
        if let Some(bad) = labels.iter().find(|&&b| b != T::one() && b != -T::one()) {
            return Err(Error::invalid(format!("label {bad} is not -1 or +1")));
        }
        Ok(Self { rows, labels, d })
    }

    pub fn rows(&self) -> &[Vec<(usize, T)>] {
        &self.rows
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same rows embedded in a wider feature space.
    pub fn with_dim(mut self, d: usize) -> Result<Self> {
        if d < self.d {
            return Err(Error::invalid(format!(
                "cannot shrink dimension from {} to {d}",
                self.d
            )));
        }
        self.d = d;
        Ok(self)
    }

    /// Squared Frobenius norm of the feature matrix.
    pub fn frobenius_sq(&self) -> T {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::zero(), |acc, &(_, v)| acc + v * v)
    }

    /// Scales every nonempty row to unit Euclidean norm. Rows whose norm is
    /// zero are left as they are.
    pub fn normalize_rows(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let norm = row.iter().fold(T::zero(), |acc, &(_, v)| acc + v * v).sqrt();
                if norm > T::zero() {
                    row.iter().map(|&(j, v)| (j, v / norm)).collect()
                } else {
                    row.clone()
                }
            })
            .collect();
        Self {
            rows,
            labels: self.labels.clone(),
            d: self.d,
        }
    }

    /// Shuffles rows with `seed`, then deals them contiguously into
    /// `n_workers` shards whose sizes differ by at most one (larger shards
    /// first). Every shard keeps the parent dimension.
    pub fn partition(&self, n_workers: usize, seed: u64) -> Result<Vec<Self>> {
        if n_workers == 0 {
            return Err(Error::invalid("partition needs at least one worker"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let base = self.len() / n_workers;
        let extra = self.len() % n_workers;
        let mut shards = Vec::with_capacity(n_workers);
        let mut start = 0;
        for k in 0..n_workers {
            let size = base + usize::from(k < extra);
            let idx = &order[start..start + size];
            shards.push(Self {
                rows: idx.iter().map(|&r| self.rows[r].clone()).collect(),
                labels: idx.iter().map(|&r| self.labels[r]).collect(),
                d: self.d,
            });
            start += size;
        }
        Ok(shards)
    }
}

/// Reads a LibSVM file. See [`parse_libsvm`].
pub fn load_libsvm<T: Scalar>(path: impl AsRef<Path>) -> Result<SparseDataset<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses LibSVM text: `<label> <idx>:<val> ...` per line with 1-based,
/// strictly increasing indices. Blank lines and `#` comments are skipped.
///
/// Two distinct raw labels map to -1/+1 in sorted order (so `{0, 1}` becomes
/// `{-1, +1}`); a single raw label maps by its sign. `d` is the largest index
/// seen.
pub fn parse_libsvm<T: Scalar, R: BufRead>(reader: R) -> Result<SparseDataset<T>> {
    let mut raw_labels = Vec::new();
    let mut rows = Vec::new();
    let mut d = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io("<libsvm input>", e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad label {label_tok:?}"),
        })?;
        if !label.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-finite label {label_tok:?}"),
            });
        }
        let mut row: Vec<(usize, T)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("feature {tok:?} lacks ':'"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature index in {tok:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature value in {tok:?}"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite feature value in {tok:?}"),
                });
            }
            let j = idx - 1;
            if let Some(&(prev, _)) = row.last() {
                if j <= prev {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!(
                            "feature indices must be strictly increasing ({} then {idx})",
                            prev + 1
                        ),
                    });
                }
            }
            d = d.max(idx);
            row.push((j, T::lit(val)));
        }
        raw_labels.push(label);
        rows.push(row);
    }

    let mut sorted = raw_labels.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let labels = match sorted.as_slice() {
        [] => Vec::new(),
        [_] => raw_labels
            .iter()
            .map(|&l| if l > 0.0 { T::one() } else { -T::one() })
            .collect(),
        [lo, _hi] => raw_labels
            .iter()
            .map(|&l| if l == *lo { -T::one() } else { T::one() })
            .collect(),
        many => {
            return Err(Error::UnsupportedDataset(format!(
                "expected binary labels, found {} distinct values",
                many.len()
            )))
        }
    };
    SparseDataset::new(rows, labels, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SparseDataset<f64>> {
        parse_libsvm(text.as_bytes())
    }

    #[test]
    fn shifts_indices_and_keeps_label() {
        let ds = parse("+1 3:0.5 7:1.0\n-1 1:2\n").unwrap();
        assert_eq!(ds.rows()[0], vec![(2, 0.5), (6, 1.0)]);
        assert_eq!(ds.labels(), &[1.0, -1.0]);
        assert_eq!(ds.dim(), 7);
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let ds = parse("").unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.dim(), 0);
    }

    #[test]
    fn decreasing_indices_rejected_with_line() {
        let err = parse("1 1:1\n1 5:2 3:1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_tokens_rejected() {
        assert!(matches!(parse("1 3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("x 3:1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 0:1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 2:abc\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn zero_one_labels_map_to_signs() {
        let ds = parse("0 1:1\n1 1:1\n0 2:1\n").unwrap();
        assert_eq!(ds.labels(), &[-1.0, 1.0, -1.0]);
    }

    #[test]
    fn three_labels_unsupported() {
        assert!(matches!(
            parse("0 1:1\n1 1:1\n2 1:1\n"),
            Err(Error::UnsupportedDataset(_))
        ));
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let ds = parse("# header\n\n+1 2:1 # note\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.rows()[0], vec![(1, 1.0)]);
    }

    #[test]
    fn normalize_examples() {
        let ds = SparseDataset::new(
            vec![vec![(0, 3.0), (1, 4.0)], vec![(2, 1.0)], vec![]],
            vec![1.0, -1.0, 1.0],
            3,
        )
        .unwrap();
        let n = ds.normalize_rows();
        assert_eq!(n.rows()[0], vec![(0, 0.6), (1, 0.8)]);
        assert_eq!(n.rows()[1], vec![(2, 1.0)]);
        assert!(n.rows()[2].is_empty());
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let rows: Vec<Vec<(usize, f64)>> = (0..7).map(|i| vec![(0, i as f64)]).collect();
        let ds = SparseDataset::new(rows, vec![1.0; 7], 1).unwrap();
        let shards = ds.partition(4, 3).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
        assert_eq!(sizes, vec![2, 2, 2, 1]);
        assert_eq!(ds.partition(4, 3).unwrap(), shards);

        let rows: Vec<Vec<(usize, f64)>> = (0..8).map(|i| vec![(0, i as f64)]).collect();
        let ds = SparseDataset::new(rows, vec![1.0; 8], 1).unwrap();
        assert!(ds.partition(4, 0).unwrap().iter().all(|s| s.len() == 2));
        assert!(ds.partition(0, 0).is_err());
    }

    #[test]
    fn partition_preserves_multiset() {
        let rows: Vec<Vec<(usize, f64)>> = (0..23)
            .map(|i| vec![(i % 5, i as f64 * 0.5)])
            .collect();
        let labels: Vec<f64> = (0..23).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let ds = SparseDataset::new(rows, labels, 5).unwrap();
        let key = |r: &Vec<(usize, f64)>, b: f64| -> Vec<u64> {
            let mut k: Vec<u64> = r.iter().flat_map(|&(j, v)| [j as u64, v.to_bits()]).collect();
            k.push(b.to_bits());
            k
        };
        let mut before: Vec<Vec<u64>> = ds
            .rows()
            .iter()
            .zip(ds.labels())
            .map(|(r, &b)| key(r, b))
            .collect();
        let mut after: Vec<Vec<u64>> = ds
            .partition(4, 11)
            .unwrap()
            .iter()
            .flat_map(|s| {
                s.rows()
                    .iter()
                    .zip(s.labels())
                    .map(|(r, &b)| key(r, b))
                    .collect::<Vec<_>>()
            })
            .collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
    }

    #[test]
    fn constructor_checks_invariants() {
        assert!(SparseDataset::new(vec![vec![(1, 1.0), (0, 1.0)]], vec![1.0], 2).is_err());
        assert!(SparseDataset::new(vec![vec![(2, 1.0)]], vec![1.0], 2).is_err());
        assert!(SparseDataset::new(vec![vec![(0, 1.0)]], vec![0.5], 2).is_err());
    }
}
