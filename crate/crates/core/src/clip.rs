//! The Euclidean clipping operator.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::DenseVector;

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && !tau.is_nan() {
        Ok(())
    } else {
        Err(Error::invalid(format!("clipping level must be positive, got {tau}")))
    }
}

/// Returns `x` if `||x|| <= tau`, otherwise `x` rescaled onto the sphere of
/// radius `tau`.
///
/// The rescaled output is guaranteed to have computed norm `<= tau`, so a
/// second application returns it unchanged bit for bit. The zero vector always
/// takes the identity branch.
pub fn clip<T: Scalar>(x: &DenseVector<T>, tau: T) -> Result<DenseVector<T>> {
    check_tau(tau)?;
    Ok(clip_unchecked(x, tau))
}

/// [`clip`] without the `tau` check, for hot loops that validated it once.
pub(crate) fn clip_unchecked<T: Scalar>(x: &DenseVector<T>, tau: T) -> DenseVector<T> {
    let norm = x.norm();
    if norm <= tau || norm.is_nan() {
        return x.clone();
    }
    let mut scale = tau / norm;
    loop {
        let y = x.scaled(scale);
        if y.norm() <= tau {
            return y;
        }
        // rounding left the norm a few ulps above tau
        scale = scale * (T::one() - T::epsilon());
    }
}

/// Whether [`clip`] would rescale `x`.
#[inline]
pub fn is_clipping_active<T: Scalar>(x: &DenseVector<T>, tau: T) -> bool {
    x.norm() > tau
}

/// `||clip(x, tau) - x||`, which equals `max(||x|| - tau, 0)`.
pub fn clip_residual_norm<T: Scalar>(x: &DenseVector<T>, tau: T) -> Result<T> {
    let c = clip(x, tau)?;
    Ok(c.sub(x).norm())
}
