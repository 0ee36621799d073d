//! Scalar abstraction shared by the plain `f64` evaluation path and the
//! forward-mode dual numbers used to differentiate the training loss.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Maximum number of directional derivatives a [`Dual`] carries.
pub const MAX_DUAL: usize = 16;

pub trait Scalar:
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
    + AddAssign
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn sq(self) -> Self {
        self * self
    }

    /// Numerically stable `ln(1 + e^x)`.
    fn softplus(self) -> Self {
        let v = self.value();
        if v > 30.0 {
            self + (-self).exp()
        } else if v < -30.0 {
            self.exp()
        } else {
            (self.exp() + 1.0).ln()
        }
    }

    fn sigmoid(self) -> Self {
        if self.value() >= 0.0 {
            ((-self).exp() + 1.0).recip()
        } else {
            let e = self.exp();
            e / (e + 1.0)
        }
    }

    /// Hard clamp of the value; the derivative is cut outside the interval.
    fn clamp_to(self, lo: f64, hi: f64) -> Self {
        let v = self.value();
        if v < lo {
            Self::cst(lo)
        } else if v > hi {
            Self::cst(hi)
        } else {
            self
        }
    }

    fn min_s(self, other: Self) -> Self {
        if other.value() < self.value() {
            other
        } else {
            self
        }
    }

    fn max_s(self, other: Self) -> Self {
        if other.value() > self.value() {
            other
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
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
}

/// Forward-mode dual number with up to [`MAX_DUAL`] tangent directions.
///
/// Only the first `n` tangent slots are meaningful; constants carry `n = 0`
/// which keeps arithmetic against literals cheap.
#[derive(Clone, Copy)]
pub struct Dual {
    pub re: f64,
    n: u8,
    eps: [f64; MAX_DUAL],
}

impl Debug for Dual {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Dual({}, {:?})", self.re, self.grad())
    }
}

impl Dual {
    pub fn constant(re: f64) -> Self {
        Dual {
            re,
            n: 0,
            eps: [0.0; MAX_DUAL],
        }
    }

    /// The `i`-th independent variable out of `n`.
    pub fn variable(re: f64, i: usize, n: usize) -> Self {
        assert!(n <= MAX_DUAL && i < n, "dual dimension out of range");
        let mut eps = [0.0; MAX_DUAL];
        eps[i] = 1.0;
        Dual {
            re,
            n: n as u8,
            eps,
        }
    }

    pub fn grad(&self) -> &[f64] {
        &self.eps[..self.n as usize]
    }

    /// Derivative with respect to variable `i` (zero beyond the active width).
    pub fn d(&self, i: usize) -> f64 {
        if i < self.n as usize {
            self.eps[i]
        } else {
            0.0
        }
    }

    #[inline]
    fn chain(self, re: f64, dfdx: f64) -> Self {
        let mut out = Dual {
            re,
            n: self.n,
            eps: [0.0; MAX_DUAL],
        };
        for i in 0..self.n as usize {
            out.eps[i] = self.eps[i] * dfdx;
        }
        out
    }

    #[inline]
    fn combine(a: Self, b: Self, re: f64, da: f64, db: f64) -> Self {
        let n = a.n.max(b.n);
        let mut out = Dual {
            re,
            n,
            eps: [0.0; MAX_DUAL],
        };
        for i in 0..n as usize {
            out.eps[i] = a.eps[i] * da + b.eps[i] * db;
        }
        out
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::combine(self, rhs, self.re + rhs.re, 1.0, 1.0)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::combine(self, rhs, self.re - rhs.re, 1.0, -1.0)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::combine(self, rhs, self.re * rhs.re, rhs.re, self.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        Dual::combine(self, rhs, re, inv, -re * inv)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        self.chain(-self.re, -1.0)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, rhs: f64) -> Dual {
        self.re += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, rhs: f64) -> Dual {
        self.re -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: f64) -> Dual {
        self.chain(self.re * rhs, rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: f64) -> Dual {
        self.chain(self.re / rhs, 1.0 / rhs)
    }
}

impl Scalar for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
}
