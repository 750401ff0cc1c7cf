//! Fixed-length dense vectors.
//!
//! Every binary operation requires equal lengths and panics otherwise; callers
//! that accept external input check dimensions up front and report
//! [`Error::DimensionMismatch`](crate::Error::DimensionMismatch).

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DenseVector<T> {
    entries: Vec<T>,
}

impl<T: Scalar> DenseVector<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            entries: vec![T::zero(); d],
        }
    }

    pub fn from_vec(entries: Vec<T>) -> Self {
        Self { entries }
    }

    pub fn from_f64_slice(values: &[f64]) -> Self {
        Self {
            entries: values.iter().map(|&v| T::lit(v)).collect(),
        }
    }

    /// Unit basis vector `e_k` in `d` dimensions.
    pub fn basis(d: usize, k: usize) -> Self {
        let mut v = Self::zeros(d);
        v.entries[k] = T::one();
        v
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.entries
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.entries
    }

    pub fn into_vec(self) -> Vec<T> {
        self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.entries.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> T {
        self.check_len(other);
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    #[inline]
    pub fn norm_sq(&self) -> T {
        self.entries.iter().fold(T::zero(), |acc, &a| acc + a * a)
    }

    /// Euclidean norm.
    #[inline]
    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    /// `self - other` as a new vector.
    pub fn sub(&self, other: &Self) -> Self {
        self.check_len(other);
        Self {
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    /// `self + other` as a new vector.
    pub fn add(&self, other: &Self) -> Self {
        self.check_len(other);
        Self {
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            entries: self.entries.iter().map(|&a| k * a).collect(),
        }
    }

    pub fn scale_mut(&mut self, k: T) {
        for a in &mut self.entries {
            *a = k * *a;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.check_len(other);
        for (a, &b) in self.entries.iter_mut().zip(&other.entries) {
            *a = *a + b;
        }
    }

    pub fn sub_assign(&mut self, other: &Self) {
        self.check_len(other);
        for (a, &b) in self.entries.iter_mut().zip(&other.entries) {
            *a = *a - b;
        }
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: T, x: &Self) {
        self.check_len(x);
        for (a, &b) in self.entries.iter_mut().zip(&x.entries) {
            *a = *a + alpha * b;
        }
    }

    /// `self = a * self + b * x`, evaluated coordinate-wise as `a*s + b*x`.
    pub fn lerp_mut(&mut self, a: T, b: T, x: &Self) {
        self.check_len(x);
        for (s, &xi) in self.entries.iter_mut().zip(&x.entries) {
            *s = a * *s + b * xi;
        }
    }

    #[inline]
    fn check_len(&self, other: &Self) {
        assert_eq!(
            self.len(),
            other.len(),
            "dense vector length mismatch: {} vs {}",
            self.len(),
            other.len()
        );
    }
}

impl<T> Index<usize> for DenseVector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.entries[i]
    }
}

impl<T> IndexMut<usize> for DenseVector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.entries[i]
    }
}

impl<T: Scalar> From<Vec<T>> for DenseVector<T> {
    fn from(entries: Vec<T>) -> Self {
        Self { entries }
    }
}

/// Sum of `parts` by fixed-shape pairwise recursion over the slice order.
///
/// The association tree depends only on `parts.len()`, so the result is the
/// same no matter which thread produced each part. `d` is the dimension used
/// when `parts` is empty.
pub fn pairwise_sum<T: Scalar>(parts: &[DenseVector<T>], d: usize) -> DenseVector<T> {
    match parts.len() {
        0 => DenseVector::zeros(d),
        1 => parts[0].clone(),
        2 => parts[0].add(&parts[1]),
        n => {
            let mid = n / 2;
            let mut left = pairwise_sum(&parts[..mid], d);
            left.add_assign(&pairwise_sum(&parts[mid..], d));
            left
        }
    }
}

/// Pairwise sum divided by the number of parts.
pub fn pairwise_mean<T: Scalar>(parts: &[DenseVector<T>], d: usize) -> DenseVector<T> {
    let mut s = pairwise_sum(parts, d);
    if !parts.is_empty() {
        let n = T::from_usize_lossy(parts.len());
        for a in s.as_mut_slice() {
            *a = *a / n;
        }
    }
    s
}

/// Pairwise sum of scalars, same association tree as [`pairwise_sum`].
pub fn pairwise_sum_scalar<T: Scalar>(parts: &[T]) -> T {
    match parts.len() {
        0 => T::zero(),
        1 => parts[0],
        n => {
            let mid = n / 2;
            pairwise_sum_scalar(&parts[..mid]) + pairwise_sum_scalar(&parts[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_and_dot() {
        let v = DenseVector::<f64>::from_vec(vec![3.0, 4.0]);
        assert_eq!(v.norm(), 5.0);
        assert_eq!(v.norm_sq(), 25.0);
        assert_eq!(v.dot(&DenseVector::from_vec(vec![1.0, -1.0])), -1.0);
    }

    #[test]
    #[should_panic(expected = "length mismatch")]
    fn mismatched_lengths_panic() {
        let a = DenseVector::<f64>::zeros(2);
        let b = DenseVector::<f64>::zeros(3);
        let _ = a.add(&b);
    }

    #[test]
    fn pairwise_sum_matches_sequential_for_integers() {
        let parts: Vec<DenseVector<f64>> = (0..7)
            .map(|i| DenseVector::from_vec(vec![i as f64, 1.0]))
            .collect();
        let s = pairwise_sum(&parts, 2);
        assert_eq!(s.as_slice(), &[21.0, 7.0]);
        let m = pairwise_mean(&parts, 2);
        assert_eq!(m.as_slice(), &[3.0, 1.0]);
        assert_eq!(pairwise_sum::<f64>(&[], 3).as_slice(), &[0.0; 3]);
    }

    #[test]
    fn axpy_and_lerp() {
        let mut a = DenseVector::<f32>::from_vec(vec![1.0, 2.0]);
        a.axpy(2.0, &DenseVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(a.as_slice(), &[3.0, 4.0]);
        a.lerp_mut(0.5, 1.0, &DenseVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(a.as_slice(), &[2.5, 2.0]);
    }
}
