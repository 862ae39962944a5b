use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::{Var, ABS_SMOOTHING};
use crate::error::{Error, Result};

/// Scalar arithmetic shared by plain `f64`, tape variables and tangent
/// bundles, so the network, the encoder and the mechanics are written once.
pub trait Real:
    Copy
    + Debug
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
    fn value(&self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(&self, c: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Result<Self>;
    fn sqrt(self) -> Result<Self>;
    fn abs_smooth(self) -> Self;
    /// `atan2(self, x)`, defined as 0 at the origin.
    fn atan2(self, x: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, c: f64) -> f64 {
        c
    }
    fn sin(self) -> f64 {
        f64::sin(self)
    }
    fn cos(self) -> f64 {
        f64::cos(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> Result<f64> {
        if self > 0.0 {
            Ok(f64::ln(self))
        } else {
            Err(Error::Domain {
                op: "log",
                value: self,
            })
        }
    }
    fn sqrt(self) -> Result<f64> {
        if self > 0.0 {
            Ok(f64::sqrt(self))
        } else {
            Err(Error::Domain {
                op: "sqrt",
                value: self,
            })
        }
    }
    fn abs_smooth(self) -> f64 {
        (self * self + ABS_SMOOTHING * ABS_SMOOTHING).sqrt() - ABS_SMOOTHING
    }
    fn atan2(self, x: f64) -> f64 {
        if self == 0.0 && x == 0.0 {
            0.0
        } else {
            f64::atan2(self, x)
        }
    }
    fn min(self, other: f64) -> f64 {
        if self <= other {
            self
        } else {
            other
        }
    }
    fn max(self, other: f64) -> f64 {
        if self >= other {
            self
        } else {
            other
        }
    }
}

impl<'t> Real for Var<'t> {
    fn value(&self) -> f64 {
        Var::value(self)
    }
    fn lift(&self, c: f64) -> Self {
        self.constant(c)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Result<Self> {
        Var::ln(self)
    }
    fn sqrt(self) -> Result<Self> {
        Var::sqrt(self)
    }
    fn abs_smooth(self) -> Self {
        Var::abs_smooth(self)
    }
    fn atan2(self, x: Self) -> Self {
        Var::atan2(self, x)
    }
    fn min(self, other: Self) -> Self {
        Var::min(self, other)
    }
    fn max(self, other: Self) -> Self {
        Var::max(self, other)
    }
}
