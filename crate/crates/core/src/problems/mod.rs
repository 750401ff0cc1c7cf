//! Objective instances: the counterexample quadratics, non-convex logistic
//! regression over sparse data, and the dataset plumbing behind it.

mod dataset;
mod logreg;
mod quadratic;
pub mod synthetic;

pub use dataset::{load_libsvm, parse_libsvm, SparseDataset};
pub use logreg::NonconvexLogReg;
pub use quadratic::{chen_example, scaled_quadratic, ChenExample, ScaledQuadratic};

use crate::scalar::Scalar;
use crate::vector::{pairwise_mean, pairwise_sum_scalar, DenseVector};

/// A finite-sum objective `f(x) = (1/n) sum_i f_i(x)` split across `n`
/// workers, each `f_i` being `L`-smooth.
pub trait Problem<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn n_workers(&self) -> usize;

    fn local_value(&self, worker: usize, x: &DenseVector<T>) -> T;

    fn local_grad(&self, worker: usize, x: &DenseVector<T>) -> DenseVector<T>;

    /// Smoothness constant shared by every `f_i` (analytic or an upper bound).
    fn smoothness(&self) -> T;

    /// Optimal value `f*`, when known.
    fn f_star(&self) -> Option<T>;

    /// A value known to be `<= f*`. Defaults to `f*` itself.
    fn f_lower_bound(&self) -> Option<T> {
        self.f_star()
    }

    /// Number of samples held by `worker`, for problems built from data.
    fn local_sample_count(&self, _worker: usize) -> Option<usize> {
        None
    }

    /// Gradient of `f_i` restricted to the given sample rows (ascending),
    /// for problems built from data.
    fn local_batch_grad(
        &self,
        _worker: usize,
        _x: &DenseVector<T>,
        _rows: &[usize],
    ) -> Option<DenseVector<T>> {
        None
    }

    fn value(&self, x: &DenseVector<T>) -> T {
        let parts: Vec<T> = (0..self.n_workers())
            .map(|i| self.local_value(i, x))
            .collect();
        pairwise_sum_scalar(&parts) / T::from_usize_lossy(parts.len())
    }

    fn local_grads(&self, x: &DenseVector<T>) -> Vec<DenseVector<T>> {
        (0..self.n_workers()).map(|i| self.local_grad(i, x)).collect()
    }

    fn grad(&self, x: &DenseVector<T>) -> DenseVector<T> {
        pairwise_mean(&self.local_grads(x), self.dim())
    }
}
