//! Scalar abstraction: every numeric kernel in this workspace is generic
//! over a floating-point scalar implementing [`Scalar`].

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating-point scalar usable in volumes, FFTs and network math.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + Default
    + std::fmt::Display
    + std::fmt::LowerExp
    + std::iter::Sum
{
    /// Lossless-ish f64 view, for logging and file headers.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the working scalar.
#[inline]
pub fn sc<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("constant representable in scalar type")
}

/// Wrap a phase difference onto the principal interval `(-pi, pi]`.
///
/// `rem_euclid(pi - d, 2 pi)` lies in `[0, 2 pi)`, so the result lies in
/// `(-pi, pi]` exactly; in particular `-pi` maps to `+pi`.
#[inline]
pub fn wrap_phase<S: Scalar>(d: S) -> S {
    let two_pi = S::PI() + S::PI();
    let mut r = (S::PI() - d) % two_pi;
    if r < S::zero() {
        r += two_pi;
    }
    S::PI() - r
}
