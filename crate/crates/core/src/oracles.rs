//! Stochastic gradient oracles, one substream per worker.
//!
//! A draw is addressed by `(seed, worker, t)` and is unbiased for the local
//! gradient `grad f_i(x)`. The kinds cover exact gradients, additive Gaussian
//! noise, mini-batches sampled without replacement, and the three-point noise
//! used to show that Clip21-SGD can stall away from a stationary point.

use rand::Rng;

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::rng::{Purpose, RngStream};
use crate::scalar::Scalar;
use crate::vector::DenseVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleKind<T> {
    Exact,
    /// `grad f_i(x) + N(0, sigma^2 I)`.
    AdditiveGaussian { sigma: T },
    /// Mean gradient over `ceil(batch_fraction * m_i)` rows drawn without
    /// replacement, resampled every step.
    Minibatch { batch_fraction: T },
    /// `grad f_i(x) + xi` with `xi` the mean of `batch` uniform draws from
    /// `{z_1, z_2, z_3} = {(3,0), (0,4), (-3,-4)} * sqrt(3 sigma^2 / 100)`,
    /// placed in the first two coordinates.
    ThreePoint { sigma: T, batch: usize },
}

#[derive(Clone, Debug)]
pub struct GradientOracle<T> {
    kind: OracleKind<T>,
    seed: u64,
}

/// The three atoms of the three-point noise, before scaling.
const THREE_POINT_ATOMS: [[f64; 2]; 3] = [[3.0, 0.0], [0.0, 4.0], [-3.0, -4.0]];

impl<T: Scalar> GradientOracle<T> {
    pub fn new(kind: OracleKind<T>, seed: u64) -> Result<Self> {
        match kind {
            OracleKind::Exact => {}
            OracleKind::AdditiveGaussian { sigma } => {
                if !(sigma >= T::zero() && sigma.is_finite()) {
                    return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
                }
            }
            OracleKind::Minibatch { batch_fraction } => {
                if !(batch_fraction > T::zero() && batch_fraction <= T::one()) {
                    return Err(Error::invalid(format!(
                        "batch fraction must lie in (0, 1], got {batch_fraction}"
                    )));
                }
            }
            OracleKind::ThreePoint { sigma, batch } => {
                if !(sigma > T::zero() && sigma.is_finite()) {
                    return Err(Error::invalid(format!("noise sigma must be > 0, got {sigma}")));
                }
                if batch == 0 {
                    return Err(Error::invalid("three-point batch must be at least 1"));
                }
            }
        }
        Ok(Self { kind, seed })
    }

    pub fn exact() -> Self {
        Self {
            kind: OracleKind::Exact,
            seed: 0,
        }
    }

    pub fn kind(&self) -> OracleKind<T> {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, OracleKind::Exact)
    }

    pub fn stream(&self, worker: usize) -> RngStream {
        RngStream::new(self.seed, worker, Purpose::BatchNoise)
    }

    /// Checks that the oracle can serve `problem`.
    pub fn check_compatible(&self, problem: &dyn Problem<T>) -> Result<()> {
        match self.kind {
            OracleKind::ThreePoint { .. } if problem.dim() < 2 => Err(Error::invalid(
                "three-point noise needs at least two coordinates",
            )),
            OracleKind::Minibatch { .. } => {
                for i in 0..problem.n_workers() {
                    match problem.local_sample_count(i) {
                        Some(m) if m > 0 => {}
                        _ => {
                            return Err(Error::invalid(format!(
                                "mini-batch oracle needs per-sample data on worker {i}"
                            )))
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// One stochastic gradient of `f_worker` at `x`, drawn at step `t`.
    pub fn draw(
        &self,
        problem: &dyn Problem<T>,
        worker: usize,
        x: &DenseVector<T>,
        t: u64,
    ) -> Result<DenseVector<T>> {
        if worker >= problem.n_workers() {
            return Err(Error::invalid(format!(
                "worker {worker} out of range for {} workers",
                problem.n_workers()
            )));
        }
        if x.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                found: x.len(),
            });
        }
        match self.kind {
            OracleKind::Exact => Ok(problem.local_grad(worker, x)),
            OracleKind::AdditiveGaussian { sigma } => {
                let mut g = problem.local_grad(worker, x);
                if sigma > T::zero() {
                    g.add_assign(&self.stream(worker).gaussian_vector(t, x.len(), sigma));
                }
                Ok(g)
            }
            OracleKind::Minibatch { batch_fraction } => {
                let m = problem.local_sample_count(worker).ok_or_else(|| {
                    Error::invalid("mini-batch oracle needs a problem built from data")
                })?;
                let k = (batch_fraction * T::from_usize_lossy(m))
                    .ceil()
                    .to_usize()
                    .unwrap_or(m)
                    .clamp(1, m);
                let rows = if k == m {
                    (0..m).collect::<Vec<_>>()
                } else {
                    let mut rng = self.stream(worker).at(t);
                    let mut rows = rand::seq::index::sample(&mut rng, m, k).into_vec();
                    rows.sort_unstable();
                    rows
                };
                problem
                    .local_batch_grad(worker, x, &rows)
                    .ok_or_else(|| Error::invalid("problem does not expose per-sample gradients"))
            }
            OracleKind::ThreePoint { sigma, batch } => {
                if x.len() < 2 {
                    return Err(Error::invalid(
                        "three-point noise needs at least two coordinates",
                    ));
                }
                let mut g = problem.local_grad(worker, x);
                let xi = three_point_noise(&mut self.stream(worker).at(t), sigma, batch);
                g[0] += xi[0];
                g[1] += xi[1];
                Ok(g)
            }
        }
    }
}

/// Scale `sqrt(3 sigma^2 / 100)` applied to the integer atoms.
pub fn three_point_scale<T: Scalar>(sigma: T) -> T {
    (T::lit(3.0) * sigma * sigma / T::lit(100.0)).sqrt()
}

/// The three noise atoms `z_1, z_2, z_3` for level `sigma`.
pub fn three_point_atoms<T: Scalar>(sigma: T) -> [DenseVector<T>; 3] {
    let s = three_point_scale(sigma);
    THREE_POINT_ATOMS.map(|[a, b]| DenseVector::from_vec(vec![T::lit(a) * s, T::lit(b) * s]))
}

/// Mean of `batch` uniform draws from the three atoms.
pub fn three_point_noise<T: Scalar, R: Rng + ?Sized>(rng: &mut R, sigma: T, batch: usize) -> [T; 2] {
    let s = three_point_scale(sigma);
    let mut acc = [0.0f64; 2];
    for _ in 0..batch {
        let [a, b] = THREE_POINT_ATOMS[rng.random_range(0..3)];
        acc[0] += a;
        acc[1] += b;
    }
    let inv = T::one() / T::from_usize_lossy(batch);
    [T::lit(acc[0]) * inv * s, T::lit(acc[1]) * inv * s]
}

/// Exact expectation of `clip_tau` over the three-point distribution,
/// `(2 tau / 15, tau / 15)`. Valid only while every atom is clipped, that is
/// `tau < 3 sigma sqrt(3) / 10`.
pub fn three_point_clipped_mean<T: Scalar>(sigma: T, tau: T) -> Result<DenseVector<T>> {
    if !(sigma > T::zero()) || !(tau > T::zero()) {
        return Err(Error::invalid("sigma and tau must be positive"));
    }
    let threshold = T::lit(3.0) * sigma * T::lit(3.0).sqrt() / T::lit(10.0);
    if tau >= threshold {
        return Err(Error::Precondition(format!(
            "tau = {tau} must be below 3 sigma sqrt(3)/10 = {threshold}"
        )));
    }
    let fifteenth = tau / T::lit(15.0);
    Ok(DenseVector::from_vec(vec![T::lit(2.0) * fifteenth, fifteenth]))
}
