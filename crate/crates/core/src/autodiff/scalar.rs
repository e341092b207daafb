//! Scalar abstraction shared by plain values, jets, and tape variables.
//!
//! Network forwards, residual operators, and loss terms are written once
//! against these traits and instantiated at `f64` (plain evaluation),
//! [`Jet2`](super::Jet2) (spatial derivatives), or tape variables over
//! either (parameter gradients).

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Jet2;

/// Arithmetic plus the elementary functions the models need. `primal`
/// exposes the undifferentiated value for branching and reporting.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    fn primal(self) -> f64;
    /// Multiply by a plain constant (cheaper than a full product).
    fn scale(self, k: f64) -> Self;
    /// Add a plain constant.
    fn offset(self, k: f64) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn softplus(self) -> Self;
    /// max(self, k), tie toward self.
    fn floor_at(self, k: f64) -> Self;
    fn powf(self, e: Self) -> Self {
        (self.ln() * e).exp()
    }
}

/// A scalar that additionally carries first and second spatial
/// derivatives. Accessors return the extracted component as a new scalar
/// (a constant in the spatial sense) so residual expressions can mix
/// components from different fields freely.
pub trait SpatialScalar: Scalar {
    fn value(self) -> Self;
    fn dx(self) -> Self;
    fn dy(self) -> Self;
    fn dxx(self) -> Self;
    fn dyy(self) -> Self;
    fn dxy(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn constant(c: f64) -> Self {
        c
    }
    #[inline]
    fn primal(self) -> f64 {
        self
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
    #[inline]
    fn offset(self, k: f64) -> Self {
        self + k
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn softplus(self) -> Self {
        if self > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }
    #[inline]
    fn floor_at(self, k: f64) -> Self {
        if self >= k {
            self
        } else {
            k
        }
    }
}

impl Scalar for Jet2 {
    #[inline]
    fn constant(c: f64) -> Self {
        Jet2::constant(c)
    }
    #[inline]
    fn primal(self) -> f64 {
        self.value
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Jet2::scale(self, k)
    }
    #[inline]
    fn offset(self, k: f64) -> Self {
        Jet2::offset(self, k)
    }
    #[inline]
    fn tanh(self) -> Self {
        Jet2::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        Jet2::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        Jet2::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        Jet2::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        Jet2::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        Jet2::cos(self)
    }
    #[inline]
    fn softplus(self) -> Self {
        Jet2::softplus(self)
    }
    #[inline]
    fn floor_at(self, k: f64) -> Self {
        Jet2::floor_at(self, k)
    }
    #[inline]
    fn powf(self, e: Self) -> Self {
        Jet2::powf(self, e)
    }
}

impl SpatialScalar for Jet2 {
    #[inline]
    fn value(self) -> Self {
        Jet2::constant(self.value)
    }
    #[inline]
    fn dx(self) -> Self {
        Jet2::constant(self.dx)
    }
    #[inline]
    fn dy(self) -> Self {
        Jet2::constant(self.dy)
    }
    #[inline]
    fn dxx(self) -> Self {
        Jet2::constant(self.dxx)
    }
    #[inline]
    fn dyy(self) -> Self {
        Jet2::constant(self.dyy)
    }
    #[inline]
    fn dxy(self) -> Self {
        Jet2::constant(self.dxy)
    }
}
