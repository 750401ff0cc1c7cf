use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::DenseVector;

use super::Problem;

/// Two one-dimensional workers, `f_1(x) = (x-3)^2/2` and `f_2(x) = (x+3)^2/2`.
///
/// The mean is `x^2/2 + 9/2` with unique minimizer 0, yet clipping each local
/// gradient at `tau = 1` freezes Clip-GD anywhere in `[-2, 2]`.
#[derive(Clone, Debug, Default)]
pub struct ChenExample;

pub fn chen_example() -> ChenExample {
    ChenExample
}

impl ChenExample {
    const CENTERS: [f64; 2] = [3.0, -3.0];
}

impl<T: Scalar> Problem<T> for ChenExample {
    fn name(&self) -> &str {
        "chen"
    }

    fn dim(&self) -> usize {
        1
    }

    fn n_workers(&self) -> usize {
        2
    }

    fn local_value(&self, worker: usize, x: &DenseVector<T>) -> T {
        let r = x[0] - T::lit(Self::CENTERS[worker]);
        T::lit(0.5) * r * r
    }

    fn local_grad(&self, worker: usize, x: &DenseVector<T>) -> DenseVector<T> {
        DenseVector::from_vec(vec![x[0] - T::lit(Self::CENTERS[worker])])
    }

    fn smoothness(&self) -> T {
        T::one()
    }

    fn f_star(&self) -> Option<T> {
        Some(T::lit(4.5))
    }
}

/// Every worker holds `f_i(x) = (L/2) ||x||^2`.
#[derive(Clone, Debug)]
pub struct ScaledQuadratic<T> {
    l: T,
    d: usize,
    n: usize,
}

pub fn scaled_quadratic<T: Scalar>(l: T, d: usize, n_workers: usize) -> Result<ScaledQuadratic<T>> {
    if !(l > T::zero() && l.is_finite()) {
        return Err(Error::invalid(format!("smoothness must be positive, got {l}")));
    }
    if d == 0 || n_workers == 0 {
        return Err(Error::invalid("dimension and worker count must be positive"));
    }
    Ok(ScaledQuadratic { l, d, n: n_workers })
}

impl<T: Scalar> Problem<T> for ScaledQuadratic<T> {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn n_workers(&self) -> usize {
        self.n
    }

    fn local_value(&self, _worker: usize, x: &DenseVector<T>) -> T {
        T::lit(0.5) * self.l * x.norm_sq()
    }

    fn local_grad(&self, _worker: usize, x: &DenseVector<T>) -> DenseVector<T> {
        x.scaled(self.l)
    }

    fn smoothness(&self) -> T {
        self.l
    }

    fn f_star(&self) -> Option<T> {
        Some(T::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DenseVector<f64> {
        DenseVector::from_vec(xs.to_vec())
    }

    #[test]
    fn chen_gradients() {
        let p = chen_example();
        let zero = v(&[0.0]);
        assert_eq!(Problem::<f64>::local_grad(&p, 0, &zero)[0], -3.0);
        assert_eq!(Problem::<f64>::local_grad(&p, 1, &zero)[0], 3.0);
        assert_eq!(Problem::<f64>::grad(&p, &zero)[0], 0.0);
        assert_eq!(Problem::<f64>::grad(&p, &v(&[2.0]))[0], 2.0);
        assert_eq!(Problem::<f64>::value(&p, &zero), 4.5);
        assert_eq!(Problem::<f64>::f_star(&p), Some(4.5));
    }

    #[test]
    fn chen_mean_gradient_is_identity() {
        let p = chen_example();
        for k in -20..=20 {
            let x = v(&[k as f64 * 0.37]);
            let g = Problem::<f64>::grad(&p, &x)[0];
            assert!((g - x[0]).abs() <= 4.0 * f64::EPSILON * (3.0 + x[0].abs()));
        }
    }

    #[test]
    fn scaled_quadratic_examples() {
        let p = scaled_quadratic(2.0, 2, 1).unwrap();
        let g = p.grad(&v(&[0.0, -1.0]));
        assert_eq!(g.as_slice(), &[0.0, -2.0]);
        assert_eq!(g.norm_sq(), 4.0);
        let gap = p.value(&v(&[0.0, -0.07])) - p.f_star().unwrap();
        assert!((gap - 0.0049).abs() < 1e-15);
        assert_eq!(p.grad(&v(&[0.0, 0.0])).norm(), 0.0);
    }

    #[test]
    fn scaled_quadratic_gradient_norm_identity() {
        let p = scaled_quadratic(3.0, 3, 4).unwrap();
        let x = v(&[0.5, -0.25, 2.0]);
        assert_eq!(p.grad(&x).norm_sq(), 9.0 * x.norm_sq());
    }

    #[test]
    fn scaled_quadratic_rejects_bad_smoothness() {
        assert!(scaled_quadratic(0.0f64, 2, 1).is_err());
        assert!(scaled_quadratic(-1.0f64, 2, 1).is_err());
    }
}
