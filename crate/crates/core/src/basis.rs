//! Univariate basis of x₀: a constant, the identity and clamped cubic
//! B-splines over the training range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub lo: f64,
    pub hi: f64,
    pub n_splines: usize,
}

impl BasisSet {
    /// Constant, identity and four cubic B-splines over `[lo, hi]`.
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        Self::with_splines(lo, hi, 4)
    }

    pub fn with_splines(lo: f64, hi: f64, n_splines: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInput(format!("bad basis range [{lo}, {hi}]")));
        }
        if n_splines < DEGREE + 1 {
            return Err(Error::InvalidInput(format!(
                "need at least {} cubic B-splines",
                DEGREE + 1
            )));
        }
        let (lo, hi) = if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        Ok(BasisSet { lo, hi, n_splines })
    }

    pub fn len(&self) -> usize {
        self.n_splines + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Clamped knot vector with uniform interior knots.
    pub fn knots(&self) -> Vec<f64> {
        let interior = self.n_splines - DEGREE - 1;
        let mut k = vec![self.lo; DEGREE + 1];
        for j in 1..=interior {
            k.push(self.lo + (self.hi - self.lo) * j as f64 / (interior + 1) as f64);
        }
        k.extend(std::iter::repeat_n(self.hi, DEGREE + 1));
        k
    }

    pub fn eval(&self, x0: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.push(1.0);
        out.push(x0);
        out.extend(bspline_basis(&self.knots(), self.n_splines, x0.clamp(self.lo, self.hi)));
        out
    }
}

/// Cox-de Boor evaluation of all degree-3 basis functions at `x`; the right
/// end of the domain belongs to the last function.
fn bspline_basis(knots: &[f64], n: usize, x: f64) -> Vec<f64> {
    let m = knots.len() - 1;
    let mut b: Vec<f64> = (0..m)
        .map(|i| {
            let inside = knots[i] <= x && x < knots[i + 1];
            let right_end = x == knots[m] && knots[i] < knots[i + 1] && knots[i + 1] == knots[m];
            if inside || right_end { 1.0 } else { 0.0 }
        })
        .collect();
    for p in 1..=DEGREE {
        for i in 0..m - p {
            let left = if knots[i + p] > knots[i] {
                (x - knots[i]) / (knots[i + p] - knots[i]) * b[i]
            } else {
                0.0
            };
            let right = if knots[i + p + 1] > knots[i + 1] {
                (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) * b[i + 1]
            } else {
                0.0
            };
            b[i] = left + right;
        }
    }
    b.truncate(n);
    b
}
