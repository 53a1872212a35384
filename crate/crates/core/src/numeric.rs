//! Scalar-generic numeric kernels used by the fusion operators.
//!
//! The pipeline itself carries [`crate::Number`] (`f64`); the kernels accept
//! any [`Scalar`] so they can be exercised at `f32` as well.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// floating point: f32 or f64
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean; `None` on an empty input.
pub fn mean<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut sum = T::zero();
    let mut count = 0usize;
    for v in values {
        sum = sum + v;
        count += 1;
    }
    if count == 0 {
        None
    } else {
        Some(sum / T::from_usize(count)?)
    }
}

/// Mean of the samples with timestamp in the trailing window `(now - window_ms, now]`.
pub fn window_mean<T: Scalar>(series: &[(u64, T)], window_ms: u64, now: u64) -> Option<T> {
    mean(
        series
            .iter()
            .filter(|(t, _)| *t <= now && now - *t < window_ms)
            .map(|(_, v)| *v),
    )
}

/// Linear interpolation between two bracketing points. Returns `None` when
/// `at` lies outside `[t0, t1]` (no extrapolation).
pub fn interpolate<T: Scalar>(p0: (u64, T), p1: (u64, T), at: u64) -> Option<T> {
    let (a, b) = if p0.0 <= p1.0 { (p0, p1) } else { (p1, p0) };
    if at < a.0 || at > b.0 {
        return None;
    }
    if at == a.0 {
        return Some(a.1);
    }
    if at == b.0 {
        return Some(b.1);
    }
    let span = T::from_u64(b.0 - a.0)?;
    let offset = T::from_u64(at - a.0)?;
    Some(a.1 + (b.1 - a.1) * (offset / span))
}
