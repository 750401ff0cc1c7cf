use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::DenseVector;

use super::{Problem, SparseDataset};

/// Logistic regression with the non-convex regularizer
/// `lambda * sum_l x_l^2 / (1 + x_l^2)`, one data shard per worker:
///
/// `f_i(x) = (1/m_i) sum_j log(1 + exp(-b_ij a_ij^T x)) + lambda * sum_l x_l^2/(1+x_l^2)`.
#[derive(Clone, Debug)]
pub struct NonconvexLogReg<T> {
    shards: Vec<SparseDataset<T>>,
    lambda: T,
    d: usize,
    smoothness: T,
}

/// `log(1 + exp(u))` without overflow.
fn softplus<T: Scalar>(u: T) -> T {
    u.max(T::zero()) + (-u.abs()).exp().ln_1p()
}

/// Logistic sigmoid `1 / (1 + exp(-u))` without overflow.
fn sigmoid<T: Scalar>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

fn sparse_dot<T: Scalar>(row: &[(usize, T)], x: &DenseVector<T>) -> T {
    row.iter().fold(T::zero(), |acc, &(j, v)| acc + v * x[j])
}

impl<T: Scalar> NonconvexLogReg<T> {
    /// Builds the problem from per-worker shards. All shards must share one
    /// dimension and hold at least one row.
    ///
    /// The recorded smoothness is `max_i ||A_i||_F^2 / (4 m_i) + 2 lambda`,
    /// which bounds the Hessian of every `f_i`.
    pub fn new(shards: Vec<SparseDataset<T>>, lambda: T) -> Result<Self> {
        if !(lambda >= T::zero() && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        let first = shards
            .first()
            .ok_or_else(|| Error::Configuration("no data shards".into()))?;
        let d = first.dim();
        if d == 0 {
            return Err(Error::Configuration("data has zero features".into()));
        }
        let mut worst = T::zero();
        for (i, shard) in shards.iter().enumerate() {
            if shard.dim() != d {
                return Err(Error::Configuration(format!(
                    "shard {i} has dimension {} but shard 0 has {d}",
                    shard.dim()
                )));
            }
            if shard.is_empty() {
                return Err(Error::Configuration(format!("shard {i} holds no rows")));
            }
            let per_row = shard.frobenius_sq() / T::from_usize_lossy(shard.len());
            worst = worst.max(per_row);
        }
        let smoothness = T::lit(0.25) * worst + T::lit(2.0) * lambda;
        Ok(Self {
            shards,
            lambda,
            d,
            smoothness,
        })
    }

    pub fn shards(&self) -> &[SparseDataset<T>] {
        &self.shards
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn regularizer(&self, x: &DenseVector<T>) -> T {
        self.lambda
            * x.iter()
                .fold(T::zero(), |acc, &v| acc + v * v / (T::one() + v * v))
    }

    fn batch_grad(&self, worker: usize, x: &DenseVector<T>, rows: &[usize]) -> DenseVector<T> {
        let shard = &self.shards[worker];
        let mut g = DenseVector::zeros(self.d);
        for &r in rows {
            let row = &shard.rows()[r];
            let b = shard.labels()[r];
            let w = -b * sigmoid(-b * sparse_dot(row, x));
            for &(j, v) in row {
                g[j] += w * v;
            }
        }
        let inv_m = T::one() / T::from_usize_lossy(rows.len().max(1));
        g.scale_mut(inv_m);
        let two = T::lit(2.0);
        for (gj, &xj) in g.as_mut_slice().iter_mut().zip(x.iter()) {
            let q = T::one() + xj * xj;
            *gj += self.lambda * two * xj / (q * q);
        }
        g
    }
}

impl<T: Scalar> Problem<T> for NonconvexLogReg<T> {
    fn name(&self) -> &str {
        "logreg"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn n_workers(&self) -> usize {
        self.shards.len()
    }

    fn local_value(&self, worker: usize, x: &DenseVector<T>) -> T {
        let shard = &self.shards[worker];
        let loss = shard
            .rows()
            .iter()
            .zip(shard.labels())
            .fold(T::zero(), |acc, (row, &b)| acc + softplus(-b * sparse_dot(row, x)));
        loss / T::from_usize_lossy(shard.len()) + self.regularizer(x)
    }

    fn local_grad(&self, worker: usize, x: &DenseVector<T>) -> DenseVector<T> {
        let all: Vec<usize> = (0..self.shards[worker].len()).collect();
        self.batch_grad(worker, x, &all)
    }

    fn smoothness(&self) -> T {
        self.smoothness
    }

    fn f_star(&self) -> Option<T> {
        None
    }

    /// Both terms of the objective are nonnegative.
    fn f_lower_bound(&self) -> Option<T> {
        Some(T::zero())
    }

    fn local_sample_count(&self, worker: usize) -> Option<usize> {
        Some(self.shards[worker].len())
    }

    fn local_batch_grad(
        &self,
        worker: usize,
        x: &DenseVector<T>,
        rows: &[usize],
    ) -> Option<DenseVector<T>> {
        Some(self.batch_grad(worker, x, rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::synthetic;

    fn tiny() -> NonconvexLogReg<f64> {
        let ds = SparseDataset::new(
            vec![
                vec![(0, 0.6), (2, 0.8)],
                vec![(1, 1.0)],
                vec![(0, -0.5), (1, 0.5), (3, 0.7)],
                vec![(2, -1.0)],
                vec![(0, 0.3), (3, -0.9)],
            ],
            vec![1.0, -1.0, 1.0, -1.0, 1.0],
            4,
        )
        .unwrap();
        NonconvexLogReg::new(vec![ds], 1e-3).unwrap()
    }

    #[test]
    fn value_at_origin_is_log_two() {
        let p = tiny();
        let v = p.value(&DenseVector::zeros(4));
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn regularizer_value() {
        let p = tiny();
        let x = DenseVector::basis(4, 0);
        assert!((p.regularizer(&x) - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = tiny();
        let h = 1e-6;
        let mut rng = crate::rng::RngStream::new(5, 0, crate::rng::Purpose::BatchNoise).at(0);
        for _ in 0..10 {
            let x: DenseVector<f64> = DenseVector::from_vec(
                (0..4).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect(),
            );
            let g = p.local_grad(0, &x);
            let mut fd = DenseVector::zeros(4);
            for j in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                fd[j] = (p.local_value(0, &xp) - p.local_value(0, &xm)) / (2.0 * h);
            }
            let rel = g.sub(&fd).norm() / g.norm().max(1e-12);
            assert!(rel <= 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn smoothness_bound_for_normalized_rows() {
        let ds = synthetic::two_class::<f64>(40, 6, 1).normalize_rows();
        let shards = ds.partition(4, 0).unwrap();
        let p = NonconvexLogReg::new(shards, 1e-3).unwrap();
        assert!((p.smoothness() - (0.25 + 2e-3)).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_and_empty_shards() {
        let a = SparseDataset::new(vec![vec![(0, 1.0)]], vec![1.0], 2).unwrap();
        let b = SparseDataset::new(vec![vec![(0, 1.0)]], vec![1.0], 3).unwrap();
        assert!(matches!(
            NonconvexLogReg::new(vec![a.clone(), b], 0.0),
            Err(Error::Configuration(_))
        ));
        let empty = SparseDataset::<f64>::new(vec![], vec![], 2).unwrap();
        assert!(matches!(
            NonconvexLogReg::new(vec![a, empty], 0.0),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }
}
