//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole crate is generic over.
///
/// Implemented for `f32` and `f64`. Public numerical results are computed in
/// `T` throughout; `f64` is only used for error payloads and RNG draws.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + std::iter::Sum
    + serde::Serialize
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Number of whole `eps`-steps that fit in `t`, tolerating rounding in the
/// quotient (so `0.3 / 0.1` counts as 3 steps, not 2).
pub fn steps_floor<T: Real>(t: T, eps: T) -> usize {
    let r = t / eps;
    let n = r.round();
    let tol = T::lit(1e-9) * n.abs().max(T::one());
    let k = if (r - n).abs() <= tol { n } else { r.floor() };
    k.max(T::zero()).to_usize().unwrap_or(0)
}

/// Ceiling counterpart of [`steps_floor`].
pub fn steps_ceil<T: Real>(t: T, eps: T) -> usize {
    let r = t / eps;
    let n = r.round();
    let tol = T::lit(1e-9) * n.abs().max(T::one());
    let k = if (r - n).abs() <= tol { n } else { r.ceil() };
    k.max(T::zero()).to_usize().unwrap_or(0)
}
