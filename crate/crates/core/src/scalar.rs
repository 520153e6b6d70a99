//! Arithmetic abstraction shared by plain `f64` evaluation and the tape.
//!
//! The dynamics, the integrator and the loss are written once against
//! [`Scalar`]; instantiating them with [`Var`](crate::diff::Var) records the
//! computation for differentiation, instantiating them with `f64` runs it
//! directly.

use core::f64::consts::TAU;
use core::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Whatever is needed to create a fresh constant (the tape, or nothing).
    type Context: Copy;

    fn constant(ctx: Self::Context, c: f64) -> Self;
    /// A constant living in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn square(self) -> Self;
    fn wrap_angle(self) -> Self;
}

impl Scalar for f64 {
    type Context = ();

    fn constant(_: (), c: f64) -> Self {
        c
    }

    fn lift(self, c: f64) -> Self {
        c
    }

    fn value(self) -> f64 {
        self
    }

    fn sin(self) -> Self {
        libm::sin(self)
    }

    fn cos(self) -> Self {
        libm::cos(self)
    }

    fn tanh(self) -> Self {
        libm::tanh(self)
    }

    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }

    fn square(self) -> Self {
        self * self
    }

    fn wrap_angle(self) -> Self {
        wrap_angle(self)
    }
}

/// Reduces an angle into `[0, 2π)`.
///
/// `fmod` is exact, so `wrap_angle(a + 2π) == wrap_angle(a)` bit for bit
/// whenever `a + 2π` itself is representable.
pub fn wrap_angle(phi: f64) -> f64 {
    let r = libm::fmod(phi, TAU);
    let r = if r < 0.0 { r + TAU } else { r };
    // r + TAU can round up to TAU for tiny negative r
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Absolute angular distance, in `[0, π]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > core::f64::consts::PI {
        TAU - d
    } else {
        d
    }
}

/// `sign` with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        for &a in &[-10.0, -TAU, -1e-18, 0.0, 1.0, PI, TAU, 3.0 * TAU + 0.5] {
            let w = wrap_angle(a);
            assert!((0.0..TAU).contains(&w), "{a} -> {w}");
        }
        assert_eq!(wrap_angle(TAU), 0.0);
    }

    #[test]
    fn angle_distance_is_symmetric_and_bounded() {
        assert!((angle_distance(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((angle_distance(TAU - 0.1, 0.1) - 0.2).abs() < 1e-12);
        assert!((angle_distance(0.0, PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn sign_of_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(2.0), 1.0);
        assert_eq!(sign(-3.0), -1.0);
    }
}
