//! Cubic pieces, piecewise-linear second derivatives and their exact double
//! integration into C² cubic splines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `c[0] + c[1] s + c[2] s² + c[3] s³` with `s = t - a`, valid on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cubic<S = f64> {
    pub a: S,
    pub b: S,
    pub c: [S; 4],
}

impl<S: Scalar> Cubic<S> {
    /// Evaluates at local offset `s` without domain checks.
    #[inline]
    pub fn eval_local(&self, s: S, order: u8) -> S {
        let [c0, c1, c2, c3] = self.c;
        match order {
            0 => ((c3 * s + c2) * s + c1) * s + c0,
            1 => (c3 * s * 3.0 + c2 * 2.0) * s + c1,
            2 => c3 * s * 6.0 + c2 * 2.0,
            _ => c3 * 6.0,
        }
    }

    #[inline]
    pub fn eval_at(&self, t: S, order: u8) -> S {
        self.eval_local(t - self.a, order)
    }

    pub fn width(&self) -> S {
        self.b - self.a
    }

    pub fn to_f64(&self) -> Cubic<f64> {
        Cubic {
            a: self.a.value(),
            b: self.b.value(),
            c: self.c.map(|v| v.value()),
        }
    }
}

impl Cubic<f64> {
    pub fn eval(&self, t: f64, order: u8) -> Result<f64> {
        if !(t >= self.a && t <= self.b) {
            return Err(Error::InvalidInput(format!(
                "t = {t} outside [{}, {}]",
                self.a, self.b
            )));
        }
        Ok(self.eval_at(t, order))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidInput(
                "piecewise-linear function needs >= 2 knots with one value each".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("knots must be strictly increasing".into()));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite knot or value".into()));
        }
        Ok(PiecewiseLinear { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = piece_index(&self.knots, t);
        let (t0, t1) = (self.knots[k], self.knots[k + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    /// Exact integral over `[a, b]`.
    pub fn integral_between(&self, a: f64, b: f64) -> Result<f64> {
        let (lo, hi) = (self.knots[0], *self.knots.last().unwrap());
        if !(lo <= a && a <= b && b <= hi) {
            return Err(Error::InvalidInput(format!(
                "integration bounds [{a}, {b}] outside [{lo}, {hi}]"
            )));
        }
        let mut total = 0.0;
        for k in 0..self.knots.len() - 1 {
            let (t0, t1) = (self.knots[k], self.knots[k + 1]);
            let (l, r) = (a.max(t0), b.min(t1));
            if r > l {
                total += 0.5 * (r - l) * (self.eval_in(k, l) + self.eval_in(k, r));
            }
        }
        Ok(total)
    }

    fn eval_in(&self, k: usize, t: f64) -> f64 {
        let (t0, t1) = (self.knots[k], self.knots[k + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }
}

/// Index of the piece containing `t`: pieces are `[t_k, t_{k+1})` with the
/// last one closed. Values outside the domain map to the nearest piece.
pub fn piece_index(knots: &[f64], t: f64) -> usize {
    let last = knots.len() - 2;
    match knots.partition_point(|&k| k <= t) {
        0 => 0,
        i => (i - 1).min(last),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    knots: Vec<f64>,
    coefs: Vec<[f64; 4]>,
}

impl CubicSpline {
    pub fn from_pieces(pieces: &[Cubic<f64>]) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidInput("spline needs at least one piece".into()));
        }
        let mut knots = vec![pieces[0].a];
        for p in pieces {
            if !(p.b > p.a) || (p.a - *knots.last().unwrap()).abs() > 1e-12 * (1.0 + p.a.abs()) {
                return Err(Error::InvalidInput("pieces must be contiguous".into()));
            }
            knots.push(p.b);
        }
        Ok(CubicSpline {
            knots,
            coefs: pieces.iter().map(|p| p.c).collect(),
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    pub fn piece(&self, k: usize) -> Cubic<f64> {
        Cubic {
            a: self.knots[k],
            b: self.knots[k + 1],
            c: self.coefs[k],
        }
    }

    pub fn n_pieces(&self) -> usize {
        self.coefs.len()
    }

    pub fn eval(&self, t: f64, order: u8) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(Error::InvalidInput(format!("t = {t} outside [{lo}, {hi}]")));
        }
        Ok(self.eval_unchecked(t, order))
    }

    /// Evaluation that extends the boundary pieces polynomially.
    pub fn eval_unchecked(&self, t: f64, order: u8) -> f64 {
        let k = piece_index(&self.knots, t);
        self.piece(k).eval_at(t, order)
    }
}

/// Coefficients of the double integral of a piecewise-linear function with
/// `u'(k_0) = c` and `u(k_0) = d`, one local cubic per piece.
pub(crate) fn integrate_twice_raw<S: Scalar>(knots: &[S], values: &[S], c: S, d: S) -> Vec<[S; 4]> {
    let mut out = Vec::with_capacity(knots.len() - 1);
    let (mut slope, mut val) = (c, d);
    for k in 0..knots.len() - 1 {
        let h = knots[k + 1] - knots[k];
        let (v0, v1) = (values[k], values[k + 1]);
        let m = (v1 - v0) / h;
        let coef = [val, slope, v0 * 0.5, m / 6.0];
        val = val + slope * h + v0 * h * h * 0.5 + m * h * h * h / 6.0;
        slope = slope + (v0 + v1) * h * 0.5;
        out.push(coef);
    }
    out
}

/// The C² spline whose second derivative is `pl`, with `u'(t_0) = c`, `u(t_0) = d`.
pub fn integrate_twice(pl: &PiecewiseLinear, c: f64, d: f64) -> CubicSpline {
    CubicSpline {
        knots: pl.knots.clone(),
        coefs: integrate_twice_raw(&pl.knots, &pl.values, c, d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pl(k: &[f64], v: &[f64]) -> PiecewiseLinear {
        PiecewiseLinear::new(k.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn constant_second_derivative_gives_parabola() {
        let s = integrate_twice(&pl(&[0.0, 1.0], &[2.0, 2.0]), 0.0, 0.0);
        for t in [0.0, 0.3, 0.7, 1.0] {
            assert_abs_diff_eq!(s.eval(t, 0).unwrap(), t * t, epsilon = 1e-15);
        }
    }

    #[test]
    fn linear_second_derivative_gives_cubic() {
        let s = integrate_twice(&pl(&[0.0, 1.0], &[0.0, 6.0]), 0.0, 0.0);
        for t in [0.0, 0.25, 0.5, 1.0] {
            assert_abs_diff_eq!(s.eval(t, 0).unwrap(), t * t * t, epsilon = 1e-15);
        }
        let line = integrate_twice(&pl(&[0.0, 1.0], &[0.0, 0.0]), 1.0, 5.0);
        assert_abs_diff_eq!(line.eval(0.4, 0).unwrap(), 5.4, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_cubic_examples() {
        let cube = Cubic { a: 0.0, b: 3.0, c: [0.0, 0.0, 0.0, 1.0] };
        assert_eq!(cube.eval(2.0, 1).unwrap(), 12.0);
        let bump = Cubic { a: 0.0, b: 1.0, c: [0.0, 2.0, -1.0, 0.0] };
        assert_eq!(bump.eval(1.0, 1).unwrap(), 0.0);
        assert!(bump.eval(1.5, 0).is_err());
    }

    #[test]
    fn knot_continuity() {
        let s = integrate_twice(&pl(&[0.0, 0.5, 1.0], &[2.0, 2.0, 2.0]), 0.0, 0.0);
        let left = s.piece(0).eval_at(0.5, 0);
        let right = s.piece(1).eval_at(0.5, 0);
        assert_eq!(left, right);
        assert_eq!(s.eval(0.5, 0).unwrap(), 0.25);
        assert!(s.eval(1.0, 0).is_ok());
        assert!(s.eval(1.0 + 1e-9, 0).is_err());
    }

    #[test]
    fn integral_examples() {
        assert_eq!(pl(&[0.0, 1.0], &[2.0, 2.0]).integral_between(0.0, 1.0).unwrap(), 2.0);
        assert_eq!(pl(&[0.0, 1.0], &[0.0, 6.0]).integral_between(0.0, 1.0).unwrap(), 3.0);
        assert!(pl(&[0.0, 1.0], &[0.0, 6.0]).integral_between(-0.1, 1.0).is_err());
    }

    #[test]
    fn piece_lookup_is_left_closed() {
        let k = [0.0, 1.0, 2.0];
        assert_eq!(piece_index(&k, 0.0), 0);
        assert_eq!(piece_index(&k, 1.0), 1);
        assert_eq!(piece_index(&k, 2.0), 1);
        assert_eq!(piece_index(&k, -1.0), 0);
        assert_eq!(piece_index(&k, 9.0), 1);
    }
}
