//! Piecewise-cubic trajectory with one cubic per bounded motif, each solved in
//! closed form from two values and two derivative conditions.

use crate::cubic::{Cubic, CubicSpline};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::semantics::{validate_semantics, Composition, Motif, PropertySet, Rule, Transition};

/// Multipliers `(a, b)` of the secant slope bounding `x'(t_0)`: the open
/// interval runs from `a·kappa` to `b·kappa`.
pub fn range_factors(first: Motif, t1: Transition) -> Result<(f64, f64)> {
    use Motif::*;
    use Transition::*;
    match (first, t1) {
        (IncConvexB, Inflection) => Ok((0.0, 1.0)),
        (IncConcaveB, Maximum) => Ok((1.5, 3.0)),
        (IncConcaveB, Inflection) => Ok((1.0, 3.0)),
        (DecConvexB, Minimum) => Ok((3.0, 1.5)),
        (DecConvexB, Inflection) => Ok((3.0, 1.0)),
        (DecConcaveB, Inflection) => Ok((1.0, 0.0)),
        _ if !first.is_bounded() => Err(Error::Structural(format!("{first} is not a bounded motif"))),
        _ => Err(Error::Structural(format!(
            "{first} cannot end in a {t1:?} at t_1"
        ))),
    }
}

/// Open interval of admissible `x'(t_0)` given the first motif, the nature
/// of `t_1` and the secant slope `kappa` between the first two transition points.
pub fn derivative_range(first: Motif, t1: Transition, kappa: f64) -> Result<(f64, f64)> {
    let (a, b) = range_factors(first, t1)?;
    if kappa * first.mon_sign() <= 0.0 || !kappa.is_finite() {
        return Err(Error::Precondition(format!(
            "secant slope {kappa} contradicts motif {first}"
        )));
    }
    Ok((a * kappa, b * kappa))
}

/// Bounded part of a trajectory: one cubic per bounded motif.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedTrajectory<S = f64> {
    pub pieces: Vec<Cubic<S>>,
    /// First derivative at t_end (0 at an extremum).
    pub d1_end: S,
    /// Second derivative at t_end (0 at an inflection).
    pub d2_end: S,
    /// First-derivative jumps at interior inflection points.
    pub slope_jumps: Vec<S>,
}

impl<S: Scalar> BoundedTrajectory<S> {
    /// Evaluates at `t`, extending the boundary pieces past the ends.
    pub fn eval(&self, t: S, order: u8) -> S {
        let tv = t.value();
        let k = self
            .pieces
            .iter()
            .position(|p| tv < p.b.value())
            .unwrap_or(self.pieces.len() - 1);
        self.pieces[k].eval_at(t, order)
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

impl BoundedTrajectory<f64> {
    pub fn to_spline(&self) -> Option<CubicSpline> {
        if self.pieces.is_empty() {
            None
        } else {
            CubicSpline::from_pieces(&self.pieces).ok()
        }
    }
}

#[derive(Clone, Copy)]
enum Left<S> {
    Slope(S),
    Flat,
}

/// Solves each motif's cubic. `transitions[i]` is the nature of the point
/// ending motif `i`; no range checks are made on `d1_start`.
pub fn c0_pieces<S: Scalar>(
    transitions: &[Transition],
    t: &[S],
    x: &[S],
    d1_start: S,
) -> Result<BoundedTrajectory<S>> {
    let nb = transitions.len();
    let mut pieces = Vec::with_capacity(nb);
    let mut slope_jumps = Vec::new();
    let mut left = Left::Slope(d1_start);
    let mut prev_end_slope = d1_start;
    for i in 0..nb {
        let h = t[i + 1] - t[i];
        if !(h.value() > 0.0) {
            return Err(Error::Degenerate(format!(
                "transition points {i} and {} coincide",
                i + 1
            )));
        }
        let delta = x[i + 1] - x[i];
        let right_extremum = transitions[i].is_extremum();
        let c = match (left, right_extremum) {
            (Left::Slope(m), true) => {
                let a = delta - m * h;
                [x[i], m, (a * 3.0 + m * h) / (h * h), (-(m * h) - a * 2.0) / (h * h * h)]
            }
            (Left::Slope(m), false) => {
                let a = delta - m * h;
                [x[i], m, a * 1.5 / (h * h), -(a / (h * h * h * 2.0))]
            }
            (Left::Flat, true) => [x[i], delta * 1.5 / h, S::zero(), -(delta / (h * h * h * 2.0))],
            (Left::Flat, false) => [x[i], delta / h, S::zero(), S::zero()],
        };
        let piece = Cubic { a: t[i], b: t[i + 1], c };
        if i > 0 && transitions[i - 1] == Transition::Inflection {
            slope_jumps.push(piece.eval_local(S::zero(), 1) - prev_end_slope);
        }
        prev_end_slope = piece.eval_local(h, 1);
        pieces.push(piece);
        left = if right_extremum {
            Left::Slope(S::zero())
        } else {
            Left::Flat
        };
    }
    let last = pieces.last().expect("at least one bounded motif");
    let h = last.width();
    let (d1_end, d2_end) = if transitions[nb - 1].is_extremum() {
        (S::zero(), last.eval_local(h, 2))
    } else {
        (last.eval_local(h, 1), S::zero())
    };
    Ok(BoundedTrajectory {
        pieces,
        d1_end,
        d2_end,
        slope_jumps,
    })
}

/// C⁰ trajectory of the bounded part of `(c, p)`.
pub fn predict_c0(c: &Composition, p: &PropertySet) -> Result<BoundedTrajectory<f64>> {
    if c.n_bounded() == 0 {
        if p.t.len() != 1 || p.x.len() != 1 {
            return Err(Error::Structural(
                "a lone unbounded motif takes a single transition point".into(),
            ));
        }
        return Ok(BoundedTrajectory {
            pieces: Vec::new(),
            d1_end: p.d1_end,
            d2_end: p.d2_end,
            slope_jumps: Vec::new(),
        });
    }
    let rep = validate_semantics(c, p)?;
    if rep.has(Rule::TimeOrdering) {
        if p.t.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Degenerate("coincident transition times".into()));
        }
        return Err(Error::Precondition("transition times not increasing".into()));
    }
    for v in &rep.violations {
        if matches!(v.rule, Rule::Monotonicity | Rule::StartDerivativeRange) {
            return Err(Error::Precondition(v.message.clone()));
        }
    }
    c0_pieces(&c.transitions(), &p.t, &p.x, p.d1_start)
}
