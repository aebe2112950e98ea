//! Scalar abstraction for the numeric core.
//!
//! Every algorithm in this crate is generic over [`Real`], a thin alias for
//! the floating-point capabilities the math actually uses. The trait is
//! implemented for `f32` and `f64`; the crate root re-exports `f64` aliases
//! for the common types, and the pipeline tooling instantiates everything at
//! `f64` so that all production computation runs in 64-bit regardless of the
//! precision of ingested files.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar usable by every routine in this crate.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into the working scalar type.
///
/// Panics only if the target type cannot represent the value at all, which
/// cannot happen for the finite literals used internally with `f32`/`f64`.
#[inline]
pub fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("finite f64 constant must convert to the working scalar type")
}

/// Converts a count into the working scalar type.
#[inline]
pub fn real_usize<F: Real>(n: usize) -> F {
    F::from_usize(n).expect("usize count must convert to the working scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_converts_constants_for_both_widths() {
        let a: f32 = real(0.25);
        let b: f64 = real(0.25);
        assert_eq!(a, 0.25f32);
        assert_eq!(b, 0.25f64);
    }

    #[test]
    fn real_usize_converts_counts() {
        let a: f64 = real_usize(15);
        assert_eq!(a, 15.0);
    }
}
