//! Smooth maximum `s_α(x) = Σ xᵢ e^{αxᵢ} / Σ e^{αxᵢ}`.
//!
//! Positive `α` leans toward the maximum, negative toward the minimum, and
//! `α = 0` is the arithmetic mean. Exponents are shifted by the extreme value
//! on the leaning side so nothing overflows.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Returns `s_α(x)` and the normalized weights `e^{αxᵢ} / Σ e^{αxⱼ}`.
pub fn smooth_max<T: Scalar>(x: &[T], alpha: T) -> Result<(T, Vec<T>)> {
    if x.is_empty() {
        return Err(Error::EmptyReduction("smooth_max of an empty vector".into()));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("smooth_max input {v}")));
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite(format!("smooth_max alpha {alpha}")));
    }
    let mut w = vec![T::zero(); x.len()];
    let s = smooth_max_into(x, alpha, &mut w);
    Ok((s, w))
}

/// Unchecked core of [`smooth_max`]; `weights` must be as long as `x`.
pub fn smooth_max_into<T: Scalar>(x: &[T], alpha: T, weights: &mut [T]) -> T {
    let shift = pivot(x, alpha);
    let mut z = T::zero();
    for (w, &v) in weights.iter_mut().zip(x) {
        *w = (alpha * (v - shift)).exp();
        z += *w;
    }
    let mut s = T::zero();
    for (w, &v) in weights.iter_mut().zip(x) {
        *w /= z;
        s += *w * v;
    }
    s
}

/// The value subtracted inside the exponent: `max x` for `α ≥ 0`, else `min x`.
#[inline]
pub fn pivot<T: Scalar>(x: &[T], alpha: T) -> T {
    if alpha >= T::zero() {
        x.iter().copied().fold(T::neg_infinity(), T::max)
    } else {
        x.iter().copied().fold(T::infinity(), T::min)
    }
}

/// `∂s/∂xᵢ = pᵢ (1 + α (xᵢ − s))`.
pub fn smooth_max_grad<T: Scalar>(x: &[T], alpha: T, s: T, weights: &[T]) -> Vec<T> {
    x.iter().zip(weights).map(|(&v, &p)| p * (T::one() + alpha * (v - s))).collect()
}
