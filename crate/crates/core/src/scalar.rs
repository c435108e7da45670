//! Scalar abstractions.
//!
//! [`Real`] is the floating-point type the library is generic over (`f32` or
//! `f64`). [`Scalar`] is the smaller set of operations the network and the
//! loss assembly need; it is implemented by every `Real` and by the
//! tape-recorded [`Var`](crate::autodiff::Var), which is how parameter
//! gradients are obtained by running the very same code on the tape.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Minimal arithmetic needed by the network forward pass and the losses.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    /// A constant (no dependence on anything being differentiated).
    fn constant(c: f64) -> Self;

    /// GELU and its first two derivatives `[g, g', g'']` evaluated at `self`.
    fn gelu_parts(self) -> [Self; 3];

    /// The primal value, for diagnostics and finiteness checks.
    fn primal(&self) -> f64;

    fn square(self) -> Self {
        self * self
    }
}

/// Floating-point scalar the library is generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Scalar
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Display
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Lossless-or-rounding conversion from `f64`.
    fn of(c: f64) -> Self {
        <Self as FromPrimitive>::from_f64(c).expect("f64 is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Standard normal density.
    fn normal_pdf(self) -> Self {
        let half = Self::of(0.5);
        (-(half * self * self)).exp() / (Self::TAU()).sqrt()
    }

    /// Standard normal CDF, computed through `erfc` to keep the left tail accurate.
    fn normal_cdf(self) -> Self {
        Self::of(0.5) * (-self / Self::SQRT_2()).erfc()
    }

    /// Exact GELU, `x Φ(x)`.
    fn gelu(self) -> Self {
        self * self.normal_cdf()
    }

    /// `[g, g', g'', g''']` of the exact GELU.
    ///
    /// g' = Φ + xφ, g'' = φ(2 − x²), g''' = φ(x³ − 4x).
    fn gelu_derivatives(self) -> [Self; 4] {
        let phi = self.normal_pdf();
        let cdf = self.normal_cdf();
        let x2 = self * self;
        let two = Self::of(2.0);
        [
            self * cdf,
            cdf + self * phi,
            phi * (two - x2),
            phi * (x2 * self - Self::of(4.0) * self),
        ]
    }
}

macro_rules! impl_real {
    ($t:ty, $erfc:path) => {
        impl Scalar for $t {
            #[inline]
            fn constant(c: f64) -> Self {
                c as $t
            }

            #[inline]
            fn gelu_parts(self) -> [Self; 3] {
                let [g, g1, g2, _] = self.gelu_derivatives();
                [g, g1, g2]
            }

            #[inline]
            fn primal(&self) -> f64 {
                *self as f64
            }
        }

        impl Real for $t {
            #[inline]
            fn erfc(self) -> Self {
                $erfc(self)
            }
        }
    };
}

impl_real!(f32, libm::erfcf);
impl_real!(f64, libm::erfc);
