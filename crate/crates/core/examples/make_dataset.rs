//! Regenerates the synthetic LibSVM dataset shipped in `data/`.
//!
//! ```text
//! cargo run -p clip21 --example make_dataset -- data/synthetic.libsvm
//! ```

use clip21::problems::synthetic::{to_libsvm_string, two_class};

/// Rows, features and seed of the shipped file.
pub const SHAPE: (usize, usize, u64) = (200, 50, 2024);

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data/synthetic.libsvm".into());
    let (m, d, seed) = SHAPE;
    let data = two_class::<f64>(m, d, seed);
    std::fs::write(&path, to_libsvm_string(&data)).unwrap_or_else(|e| panic!("writing {path}: {e}"));
    println!("wrote {m} rows x {d} features to {path}");
}
