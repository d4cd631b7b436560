//! Scalar abstraction for the numeric layers.
//!
//! The interval and affine-form layers are generic over [`Scalar`] so they
//! work in both `f32` and `f64`; the synthesis pipeline itself instantiates
//! everything at `f64` (see the `Real` alias at the crate root) because its
//! tolerances sit far below `f32` resolution.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar with the special functions the toolkit needs.
///
/// `erf`/`erfc` route through `libm`, which is correctly rounded to well
/// under 1 ulp for both widths.
pub trait Scalar: Float + FromPrimitive + Copy + std::fmt::Debug + 'static {
    /// Error function.
    fn erf(self) -> Self;
    /// Complementary error function, `1 - erf(x)` without cancellation.
    fn erfc(self) -> Self;

    /// Shorthand for converting an `f64` constant, panicking only for NaN
    /// inputs (which we never feed it).
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}
