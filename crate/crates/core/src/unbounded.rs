//! Closed-form tails for the six unbounded motifs, anchored at
//! `(t_end, x_end, x'(t_end), x''(t_end))`.

use crate::cubic::integrate_twice_raw;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::semantics::{min_half_life, Motif, MotifKind, TailProps};

const LN3: f64 = 1.098_612_288_668_109_8;
const LN4: f64 = 1.386_294_361_119_890_6;

/// Tail properties in a generic scalar type.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TailParam<S> {
    Gamma(S),
    Asymptote { h: S, t_half: S },
}

#[derive(Debug, Clone, Copy)]
enum Form<S> {
    /// `x = x_end + s (th1 (e^{th2 tau} - 1) + th3 tau^2 + th4 tau)`
    Exp { s: f64, th: [S; 4] },
    /// `x = x_end + s th1 ln(th2 tau^2 + th3 tau + 1)`
    Log { s: f64, th: [S; 3] },
    /// `x = h + 2 (x_end - h) / (1 + e^{g(tau)})`, with g'' piecewise linear
    /// on `(0, t1, t2)` and g linear beyond `t2`.
    Sigmoid {
        h: S,
        amp: S,
        t1: S,
        t2: S,
        g: [[S; 4]; 2],
        g_t2: S,
        slope_t2: S,
    },
}

/// Analytic unbounded part of a trajectory, valid for `t >= t_end`.
#[derive(Debug, Clone, Copy)]
pub struct Tail<S = f64> {
    pub motif: Motif,
    pub t_end: S,
    pub x_end: S,
    form: Form<S>,
}

impl<S: Scalar> Tail<S> {
    pub(crate) fn build(motif: Motif, param: TailParam<S>, t_end: S, x_end: S, d1: S, d2: S) -> Self {
        let form = match (motif.kind(), param) {
            (MotifKind::Divergent, TailParam::Gamma(gamma)) => {
                let s = motif.mon_sign();
                let (d1, d2) = (d1 * s, d2 * s);
                if motif.convex() == motif.increasing() {
                    let th2 = S::cst(2f64.ln()) / gamma;
                    let mut th1 = S::cst(1.0);
                    for cand in [d1 / (th2 * 2.0), d2 / (th2 * th2 * 2.0)] {
                        if cand.value() > 0.0 {
                            th1 = th1.min_s(cand);
                        }
                    }
                    let th3 = (d2 - th1 * th2 * th2) * 0.5;
                    let th4 = d1 - th1 * th2;
                    Form::Exp {
                        s,
                        th: [th1, th2, th3, th4],
                    }
                } else {
                    let th1 = gamma / LN4;
                    let th3 = d1 / th1;
                    let th2 = th3 * th3 * 0.5;
                    Form::Log { s, th: [th1, th2, th3] }
                }
            }
            (MotifKind::Asymptote, TailParam::Asymptote { h, t_half }) => {
                let amp = x_end - h;
                let g0 = -(d1 * 2.0) / amp;
                let big_t = t_half - t_end;
                let l = S::cst(1.5 * LN3) / g0;
                let (t2, v1) = if big_t.value() <= l.value() {
                    (big_t, (S::cst(LN3) - g0 * big_t) * 4.0 / (big_t * big_t))
                } else {
                    (l, (S::cst(LN3) - g0 * big_t) * 4.0 / (big_t * l * 2.0 - l * l))
                };
                let t1 = t2 * 0.5;
                let z = S::zero();
                let coefs = integrate_twice_raw(&[z, t1, t2], &[z, v1, z], g0, z);
                let g = [coefs[0], coefs[1]];
                let last = crate::cubic::Cubic { a: t1, b: t2, c: g[1] };
                let h2 = t2 - t1;
                Form::Sigmoid {
                    h,
                    amp,
                    t1,
                    t2,
                    g,
                    g_t2: last.eval_local(h2, 0),
                    slope_t2: last.eval_local(h2, 1),
                }
            }
            _ => unreachable!("tail parameters checked against the motif kind"),
        };
        Tail {
            motif,
            t_end,
            x_end,
            form,
        }
    }

    /// Value or derivative (order 0-2) at time `t`.
    pub fn eval(&self, t: S, order: u8) -> S {
        let tau = t - self.t_end;
        match self.form {
            Form::Exp { s, th: [th1, th2, th3, th4] } => {
                let e = (th2 * tau).exp();
                match order {
                    0 => self.x_end + (th1 * (e - 1.0) + th3 * tau * tau + th4 * tau) * s,
                    1 => (th1 * th2 * e + th3 * tau * 2.0 + th4) * s,
                    _ => (th1 * th2 * th2 * e + th3 * 2.0) * s,
                }
            }
            Form::Log { s, th: [th1, th2, th3] } => {
                let q = (th2 * tau + th3) * tau + 1.0;
                match order {
                    0 => self.x_end + th1 * q.ln() * s,
                    1 => th1 * (th2 * tau * 2.0 + th3) / q * s,
                    _ => {
                        let dq = th2 * tau * 2.0 + th3;
                        th1 * (th2 * q * 2.0 - dq * dq) / (q * q) * s
                    }
                }
            }
            Form::Sigmoid { .. } => {
                let (g, dg, ddg) = self.g_at(tau);
                let Form::Sigmoid { h, amp, .. } = self.form else { unreachable!() };
                let sig = (-g).sigmoid();
                match order {
                    0 => h + amp * sig * 2.0,
                    1 => -(amp * sig * (-sig + 1.0) * dg * 2.0),
                    _ => -(amp * sig * (-sig + 1.0) * (ddg - (-(sig * 2.0) + 1.0) * dg * dg) * 2.0),
                }
            }
        }
    }

    fn g_at(&self, tau: S) -> (S, S, S) {
        let Form::Sigmoid { t1, t2, g, g_t2, slope_t2, .. } = self.form else {
            unreachable!()
        };
        let tv = tau.value();
        if tv >= t2.value() {
            let d = tau - t2;
            (g_t2 + slope_t2 * d, slope_t2, S::zero())
        } else {
            let piece = if tv < t1.value() {
                crate::cubic::Cubic { a: S::zero(), b: t1, c: g[0] }
            } else {
                crate::cubic::Cubic { a: t1, b: t2, c: g[1] }
            };
            (
                piece.eval_at(tau, 0),
                piece.eval_at(tau, 1),
                piece.eval_at(tau, 2),
            )
        }
    }
}

/// Builds the tail of `motif` after checking the property domain.
pub fn predict_tail(
    motif: Motif,
    props: &TailProps,
    t_end: f64,
    x_end: f64,
    d1_end: f64,
    d2_end: f64,
) -> Result<Tail<f64>> {
    for (name, v) in [("t_end", t_end), ("x_end", x_end), ("d1_end", d1_end), ("d2_end", d2_end)] {
        crate::error::ensure_finite(name, v)?;
    }
    let s = motif.mon_sign();
    let pre = |m: String| Err(Error::Precondition(m));
    let param = match (motif.kind(), *props) {
        (MotifKind::Divergent, TailProps::Gamma(g)) => {
            if !(g > 0.0 && g.is_finite()) {
                return pre(format!("gamma = {g} must be positive"));
            }
            if motif.convex() == motif.increasing() {
                if s * d1_end < 0.0 || s * d2_end < 0.0 {
                    return pre(format!("{motif} needs derivatives with its signs"));
                }
            } else if s * d1_end <= 0.0 || d2_end.abs() > 1e-9 {
                return pre(format!("{motif} needs a strictly signed d1_end and d2_end = 0"));
            }
            TailParam::Gamma(g)
        }
        (MotifKind::Asymptote, TailProps::Asymptote { h, t_half }) => {
            if s * (h - x_end) <= 0.0 {
                return pre(format!("asymptote {h} on the wrong side of x_end = {x_end}"));
            }
            if s * d1_end <= 0.0 || d2_end.abs() > 1e-9 {
                return pre(format!("{motif} needs a strictly signed d1_end and d2_end = 0"));
            }
            let lo = min_half_life(x_end, h, d1_end);
            if !(t_half - t_end >= lo * (1.0 - 1e-9)) {
                return pre(format!(
                    "t_half - t_end = {} below the admissible minimum {lo}",
                    t_half - t_end
                ));
            }
            TailParam::Asymptote { h, t_half }
        }
        (MotifKind::Bounded, _) => {
            return Err(Error::Structural(format!("{motif} is not unbounded")))
        }
        _ => return Err(Error::Structural(format!("tail properties do not fit {motif}"))),
    };
    Ok(Tail::build(motif, param, t_end, x_end, d1_end, d2_end))
}

/// Numerically re-measures the tail properties. The horizon is
/// `horizon_multiplier` times the tail's own time scale.
pub fn measure_tail_props(tail: &Tail<f64>, horizon_multiplier: f64) -> Result<TailProps> {
    let x = |tau: f64, order: u8| tail.eval(tail.t_end + tau, order);
    match tail.form {
        Form::Exp { s, th } => {
            let tau = horizon_multiplier.min(500.0) / th[1];
            let base = s * x(tau, 0);
            if !(base > 0.0 && base.is_finite()) {
                return Err(Error::Convergence("tail has not left the origin at the horizon".into()));
            }
            let above = |gap: f64| s * x(tau + gap, 0) >= 2.0 * base;
            let mut hi = 1.0 / th[1];
            let mut guard = 0;
            while !above(hi) {
                hi *= 2.0;
                guard += 1;
                if guard > 200 {
                    return Err(Error::Convergence("doubling gap not bracketed".into()));
                }
            }
            Ok(TailProps::Gamma(bisect(0.0, hi, |g| !above(g))))
        }
        Form::Log { th, .. } => {
            let tau = horizon_multiplier / th[2];
            let gap = (x(2.0 * tau, 0) - x(tau, 0)).abs();
            if !gap.is_finite() {
                return Err(Error::Convergence("non-finite increment".into()));
            }
            Ok(TailProps::Gamma(gap))
        }
        Form::Sigmoid { t2, .. } => {
            let mut tau = horizon_multiplier * t2.max(1e-12);
            let mut prev = x(tau, 0);
            let mut settled = false;
            for _ in 0..2000 {
                tau *= 2.0;
                let cur = x(tau, 0);
                if cur == prev {
                    settled = true;
                    break;
                }
                prev = cur;
            }
            if !settled || !prev.is_finite() {
                return Err(Error::Convergence("asymptote not reached".into()));
            }
            let h = prev;
            let mid = 0.5 * (tail.x_end + h);
            let s = if tail.x_end > h { 1.0 } else { -1.0 };
            let mut hi = t2.max(1e-12);
            while s * (x(hi, 0) - mid) > 0.0 {
                hi *= 2.0;
            }
            let t_half = bisect(0.0, hi, |v| s * (x(v, 0) - mid) > 0.0);
            Ok(TailProps::Asymptote {
                h,
                t_half: tail.t_end + t_half,
            })
        }
    }
}

/// Boundary of a predicate that holds at `lo` and fails at `hi`.
fn bisect(mut lo: f64, mut hi: f64, holds: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
