use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::Real;
use super::tape::{Tape, Var, ABS_SMOOTHING};
use crate::error::Result;

/// A tape variable together with its derivative along the three spatial
/// input directions. The tangent coefficients are themselves tape nodes, so a
/// backward pass differentiates through them (forward-over-reverse).
#[derive(Clone, Copy, Debug)]
pub struct TangentValue<'t> {
    pub primal: Var<'t>,
    pub tangent: [Var<'t>; 3],
}

impl<'t> TangentValue<'t> {
    /// A value that does not depend on the spatial input.
    pub fn constant(primal: Var<'t>) -> Self {
        let zero = primal.constant(0.0);
        TangentValue {
            primal,
            tangent: [zero; 3],
        }
    }

    /// Seeds the coordinates of `x` with the standard basis as tangents.
    pub fn seed(tape: &'t Tape, x: [f64; 3]) -> [Self; 3] {
        Self::seed_vars([tape.var(x[0]), tape.var(x[1]), tape.var(x[2])])
    }

    /// Like [`TangentValue::seed`] for coordinates already on the tape.
    pub fn seed_vars(x: [Var<'t>; 3]) -> [Self; 3] {
        let tape = x[0].tape();
        let zero = tape.var(0.0);
        let one = tape.var(1.0);
        std::array::from_fn(|i| {
            let mut tangent = [zero; 3];
            tangent[i] = one;
            TangentValue {
                primal: x[i],
                tangent,
            }
        })
    }

    fn chain(self, primal: Var<'t>, derivative: Var<'t>) -> Self {
        TangentValue {
            primal,
            tangent: self.tangent.map(|d| derivative * d),
        }
    }
}

impl<'t> Add for TangentValue<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        TangentValue {
            primal: self.primal + rhs.primal,
            tangent: std::array::from_fn(|i| self.tangent[i] + rhs.tangent[i]),
        }
    }
}

impl<'t> Sub for TangentValue<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        TangentValue {
            primal: self.primal - rhs.primal,
            tangent: std::array::from_fn(|i| self.tangent[i] - rhs.tangent[i]),
        }
    }
}

impl<'t> Mul for TangentValue<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        TangentValue {
            primal: self.primal * rhs.primal,
            tangent: std::array::from_fn(|i| {
                self.tangent[i] * rhs.primal + self.primal * rhs.tangent[i]
            }),
        }
    }
}

impl<'t> Div for TangentValue<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.primal / rhs.primal;
        TangentValue {
            primal: q,
            tangent: std::array::from_fn(|i| (self.tangent[i] - q * rhs.tangent[i]) / rhs.primal),
        }
    }
}

impl<'t> Neg for TangentValue<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        TangentValue {
            primal: -self.primal,
            tangent: self.tangent.map(|d| -d),
        }
    }
}

impl<'t> Add<f64> for TangentValue<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        TangentValue {
            primal: self.primal + rhs,
            tangent: self.tangent,
        }
    }
}

impl<'t> Sub<f64> for TangentValue<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        TangentValue {
            primal: self.primal - rhs,
            tangent: self.tangent,
        }
    }
}

impl<'t> Mul<f64> for TangentValue<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        TangentValue {
            primal: self.primal * rhs,
            tangent: self.tangent.map(|d| d * rhs),
        }
    }
}

impl<'t> Div<f64> for TangentValue<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        TangentValue {
            primal: self.primal / rhs,
            tangent: self.tangent.map(|d| d / rhs),
        }
    }
}

impl<'t> Real for TangentValue<'t> {
    fn value(&self) -> f64 {
        self.primal.value()
    }

    fn lift(&self, c: f64) -> Self {
        TangentValue::constant(self.primal.constant(c))
    }

    fn sin(self) -> Self {
        self.chain(self.primal.sin(), self.primal.cos())
    }

    fn cos(self) -> Self {
        self.chain(self.primal.cos(), -self.primal.sin())
    }

    fn tanh(self) -> Self {
        let t = self.primal.tanh();
        let d = (t * t - 1.0) * -1.0;
        self.chain(t, d)
    }

    fn exp(self) -> Self {
        let e = self.primal.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Result<Self> {
        let l = self.primal.ln()?;
        let inv = self.primal.constant(1.0) / self.primal;
        Ok(self.chain(l, inv))
    }

    fn sqrt(self) -> Result<Self> {
        let s = self.primal.sqrt()?;
        let d = self.primal.constant(0.5) / s;
        Ok(self.chain(s, d))
    }

    fn abs_smooth(self) -> Self {
        let s = self.primal.abs_smooth();
        // d/dx sqrt(x^2 + eps^2) = x / (s + eps)
        let d = self.primal / (s + ABS_SMOOTHING);
        self.chain(s, d)
    }

    fn atan2(self, x: Self) -> Self {
        let primal = self.primal.atan2(x.primal);
        let r2 = self.primal * self.primal + x.primal * x.primal;
        if r2.value() == 0.0 {
            return TangentValue::constant(primal);
        }
        TangentValue {
            primal,
            tangent: std::array::from_fn(|i| {
                (x.primal * self.tangent[i] - self.primal * x.tangent[i]) / r2
            }),
        }
    }

    fn min(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }

    fn max(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }
}
