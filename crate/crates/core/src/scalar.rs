//! Scalar abstraction for the numeric core.
//!
//! All pool arithmetic, lifecycle accounting, risk statistics and the
//! optimizers are generic over [`Real`], so the same code runs at `f64`
//! (the default everywhere) or `f32`. Randomness is always drawn as `f64`
//! and converted, which keeps event streams canonical across scalar types.

use num_traits::Float;

/// Floating-point scalar usable by the numeric core: `f32` or `f64`.
pub trait Real:
    Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + std::fmt::Debug
        + std::fmt::Display
        + std::iter::Sum
        + std::ops::AddAssign
        + std::ops::SubAssign
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn real<F: Real>(v: f64) -> F {
    F::from(v).expect("f64 constant representable in scalar type")
}

/// A tolerance stated for `f64`, widened when the scalar type is coarser.
///
/// `f64` keeps the spec'd value; `f32` gets `factor * epsilon` instead when
/// that is larger, so the same invariants are checkable at both widths.
#[inline]
pub fn scaled_tol<F: Real>(f64_tol: f64, eps_factor: f64) -> F {
    let stated = real::<F>(f64_tol);
    let floor = F::epsilon() * real::<F>(eps_factor);
    if floor > stated {
        floor
    } else {
        stated
    }
}
