//! C² trajectory predictor: the bounded part is described by its piecewise
//! linear second derivative over the transition points plus one free knot
//! per motif, integrated twice and fitted to the transition points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cubic::{integrate_twice_raw, Cubic, CubicSpline};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, Lbfgs, LbfgsConfig, StepStatus};
use crate::scalar::{Dual, Scalar, MAX_DUAL};
use crate::semantics::{validate_semantics, Composition, PropertySet, Transition};
use crate::traj_c0::predict_c0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Config {
    /// Largest accepted error on transition values and prescribed slopes.
    pub threshold: f64,
    /// Weight of the sign penalties.
    pub lambda: f64,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for C2Config {
    fn default() -> Self {
        C2Config {
            threshold: 1e-3,
            lambda: 1e6,
            restarts: 3,
            seed: 0,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C2Status {
    Exact,
    FallbackC0,
}

/// A free parameter of the second-derivative description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Knot(usize),
    Value(usize),
}

/// Which knots and values are fixed, determined or free for a composition.
#[derive(Debug, Clone)]
pub struct C2Layout {
    /// Number of transition points `n`; knots are `t_0 .. t_{2n-2}`.
    pub n_transitions: usize,
    pub free: Vec<Param>,
    /// Odd value indices solved from a prescribed slope at the next transition.
    pub determined: Vec<usize>,
    /// Curvature sign of every knot value (0 where the value is forced to 0).
    pub signs: Vec<f64>,
    transitions: Vec<Transition>,
}

impl C2Layout {
    pub fn new(c: &Composition) -> Result<Self> {
        let nb = c.n_bounded();
        if nb == 0 {
            return Err(Error::Precondition("composition has no bounded motif".into()));
        }
        let n = nb + 1;
        let transitions = c.transitions();
        let bounded = c.bounded();
        let k_last = 2 * n - 2;
        let mut free = Vec::new();
        let mut determined = Vec::new();
        let mut signs = vec![0.0; k_last + 1];
        for k in 0..=k_last {
            if k % 2 == 1 {
                let i = (k + 1) / 2; // the transition this interval ends in
                free.push(Param::Knot(k));
                signs[k] = bounded[i - 1].curv_sign();
                if i == n - 1 || transitions[i - 1].is_extremum() {
                    determined.push(k);
                } else {
                    free.push(Param::Value(k));
                }
            } else {
                let i = k / 2;
                if i == 0 {
                    signs[k] = bounded[0].curv_sign();
                    free.push(Param::Value(k));
                } else if i == n - 1 {
                    signs[k] = if transitions[i - 1].is_extremum() {
                        bounded[i - 1].curv_sign()
                    } else {
                        0.0
                    };
                } else if transitions[i - 1].is_extremum() {
                    signs[k] = bounded[i].curv_sign();
                    free.push(Param::Value(k));
                }
            }
        }
        Ok(C2Layout {
            n_transitions: n,
            free,
            determined,
            signs,
            transitions,
        })
    }

    /// Total parameter count: knots, values and two integration constants.
    pub fn n_params(&self) -> usize {
        2 * (2 * self.n_transitions - 1) + 2
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.n_params() - self.n_free()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free
            .iter()
            .map(|p| match p {
                Param::Knot(k) => format!("t{k}"),
                Param::Value(k) => format!("v{k}"),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct C2Fit {
    pub spline: CubicSpline,
    pub status: C2Status,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub max_value_residual: f64,
    pub max_slope_residual: f64,
}

const DELTA: f64 = 1e-3;
const EPS: f64 = 1e-8;

struct Problem<'a> {
    layout: &'a C2Layout,
    p: &'a PropertySet,
    vscale: f64,
    xscale: f64,
    lambda: f64,
}

struct Eval<S> {
    knots: Vec<S>,
    values: Vec<S>,
    coefs: Vec<[S; 4]>,
}

impl Problem<'_> {
    fn assemble<S: Scalar>(&self, z: &[S]) -> Eval<S> {
        let n = self.layout.n_transitions;
        let kl = 2 * n - 2;
        let mut knots = vec![S::zero(); kl + 1];
        let mut values = vec![S::zero(); kl + 1];
        for i in 0..n {
            knots[2 * i] = S::cst(self.p.t[i]);
        }
        values[kl] = S::cst(self.p.d2_end);
        for (j, param) in self.layout.free.iter().enumerate() {
            match *param {
                Param::Knot(k) => {
                    let (a, b) = (self.p.t[(k - 1) / 2], self.p.t[(k + 1) / 2]);
                    knots[k] = z[j] * (b - a) + a;
                }
                Param::Value(k) => values[k] = z[j] * (self.layout.signs[k] * self.vscale),
            }
        }
        let mut slope = S::cst(self.p.d1_start);
        for i in 1..n {
            let (k0, k1, k2) = (2 * i - 2, 2 * i - 1, 2 * i);
            let left = (knots[k1] - knots[k0]) * 0.5;
            let right = (knots[k2] - knots[k1]) * 0.5;
            if self.layout.determined.contains(&k1) {
                let target = if i == n - 1 {
                    S::cst(self.p.d1_end)
                } else {
                    S::zero()
                };
                values[k1] = (target - slope - left * values[k0] - right * values[k2])
                    / ((knots[k2] - knots[k0]) * 0.5);
                slope = target;
            } else {
                slope = slope
                    + left * (values[k0] + values[k1])
                    + right * (values[k1] + values[k2]);
            }
        }
        let coefs = integrate_twice_raw(&knots, &values, S::cst(self.p.d1_start), S::cst(self.p.x[0]));
        Eval {
            knots,
            values,
            coefs,
        }
    }

    /// Value and slope at every transition point `t_1 .. t_{n-1}`.
    fn at_transitions<S: Scalar>(&self, e: &Eval<S>) -> Vec<(S, S)> {
        (1..self.layout.n_transitions)
            .map(|i| {
                let k = 2 * i - 1;
                let piece = Cubic {
                    a: e.knots[k],
                    b: e.knots[k + 1],
                    c: e.coefs[k],
                };
                let h = piece.width();
                (piece.eval_local(h, 0), piece.eval_local(h, 1))
            })
            .collect()
    }

    fn objective<S: Scalar>(&self, z: &[S]) -> S {
        let e = self.assemble(z);
        let n = self.layout.n_transitions;
        let mut total = S::zero();
        for (idx, (u, du)) in self.at_transitions(&e).into_iter().enumerate() {
            let i = idx + 1;
            total += ((u - self.p.x[i]) / self.xscale).sq();
            if i < n - 1 && self.layout.transitions[i - 1] == Transition::Inflection {
                let mon = self.layout_mon(i);
                let viol = -(du * mon) / (self.xscale / (self.p.t[n - 1] - self.p.t[0]));
                if viol.value() > 0.0 {
                    total += viol * self.lambda;
                }
            }
        }
        for &k in &self.layout.determined {
            let v = e.values[k] * (self.layout.signs[k] / self.vscale);
            let viol = -v + EPS;
            if viol.value() > 0.0 {
                total += viol * self.lambda;
            }
        }
        total
    }

    /// Monotonicity sign at transition `i` (shared by both adjacent motifs
    /// at an inflection).
    fn layout_mon(&self, i: usize) -> f64 {
        if self.p.x[i] > self.p.x[i - 1] {
            1.0
        } else {
            -1.0
        }
    }

    fn grad(&self, z: &[f64], g: &mut [f64]) -> f64 {
        let n = z.len();
        if n <= MAX_DUAL {
            let zd: Vec<Dual> = z
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::variable(v, i, n))
                .collect();
            let out = self.objective(&zd);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = out.d(i);
            }
            out.re
        } else {
            let f0 = self.objective(z);
            let mut zz = z.to_vec();
            for i in 0..n {
                let h = 1e-7 * (1.0 + z[i].abs());
                zz[i] = z[i] + h;
                let fp = self.objective(&zz);
                zz[i] = z[i] - h;
                let fm = self.objective(&zz);
                zz[i] = z[i];
                g[i] = (fp - fm) / (2.0 * h);
            }
            f0
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.layout
            .free
            .iter()
            .map(|p| match p {
                Param::Knot(_) => (DELTA, 1.0 - DELTA),
                Param::Value(_) => (EPS, 1e8),
            })
            .unzip()
    }

    /// Residuals and sign checks of a candidate.
    fn assess(&self, z: &[f64]) -> (f64, f64, bool) {
        let e = self.assemble(z);
        let n = self.layout.n_transitions;
        let mut max_val: f64 = 0.0;
        let mut max_slope: f64 = 0.0;
        let mut signs_ok = true;
        for (idx, (u, du)) in self.at_transitions(&e).into_iter().enumerate() {
            let i = idx + 1;
            max_val = max_val.max((u - self.p.x[i]).abs());
            if i == n - 1 {
                max_slope = max_slope.max((du - self.p.d1_end).abs());
            } else if self.layout.transitions[i - 1].is_extremum() {
                max_slope = max_slope.max(du.abs());
            } else if du * self.layout_mon(i) <= 0.0 {
                signs_ok = false;
            }
        }
        for (k, &v) in e.values.iter().enumerate() {
            let s = self.layout.signs[k];
            if s != 0.0 && v * s <= 0.0 {
                signs_ok = false;
            }
        }
        (max_val, max_slope, signs_ok)
    }

    fn initial_guess(&self, c0: &crate::traj_c0::BoundedTrajectory, frac: f64) -> Vec<f64> {
        let mut knot_at = vec![0.0; 2 * self.layout.n_transitions - 1];
        for i in 0..self.layout.n_transitions {
            knot_at[2 * i] = self.p.t[i];
        }
        for k in (1..knot_at.len()).step_by(2) {
            knot_at[k] = knot_at[k - 1] + frac * (knot_at[k + 1] - knot_at[k - 1]);
        }
        self.layout
            .free
            .iter()
            .map(|p| match *p {
                Param::Knot(_) => frac,
                Param::Value(k) => {
                    // sample just inside the piece so the C⁰ curvature has its motif sign
                    let piece = c0.pieces[(k / 2).min(c0.pieces.len() - 1)];
                    let t = knot_at[k].clamp(piece.a, piece.b);
                    let t = t + 1e-3 * (piece.b - piece.a) * if k % 2 == 0 { 1.0 } else { 0.0 };
                    let v = piece.eval_at(t, 2) * self.layout.signs[k] / self.vscale;
                    if v > 1e-3 {
                        v
                    } else {
                        0.5
                    }
                }
            })
            .collect()
    }
}

/// Fits the C² spline for `(c, p)`, falling back to the C⁰ trajectory when
/// no restart meets the threshold.
pub fn predict_c2(c: &Composition, p: &PropertySet, cfg: &C2Config) -> Result<C2Fit> {
    if !(cfg.threshold > 0.0) {
        return Err(Error::InvalidInput("threshold must be positive".into()));
    }
    let layout = C2Layout::new(c)?;
    validate_semantics(c, p)?.into_result()?;
    let c0 = predict_c0(c, p)?;
    let n = layout.n_transitions;
    let span = p.t[n - 1] - p.t[0];
    let xscale = p
        .x
        .iter()
        .map(|v| (v - p.x[0]).abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    let vscale = (0..n - 1)
        .map(|i| (p.x[i + 1] - p.x[i]).abs() / (p.t[i + 1] - p.t[i]).powi(2))
        .fold(p.d2_end.abs(), f64::max)
        .max(1e-12 * xscale / (span * span));
    let prob = Problem {
        layout: &layout,
        p,
        vscale,
        xscale,
        lambda: cfg.lambda,
    };
    let (lower, upper) = prob.bounds();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = prob.initial_guess(&c0, 0.5);
    let mut starts = vec![base.clone(), prob.initial_guess(&c0, 1.0 / 3.0)];
    while starts.len() < cfg.restarts.max(1) {
        let jitter: Vec<f64> = base
            .iter()
            .zip(&layout.free)
            .map(|(&v, p)| match p {
                Param::Knot(_) => (v + rng.random_range(-0.2..0.2)).clamp(DELTA, 1.0 - DELTA),
                Param::Value(_) => v * rng.random_range(-0.5f64..0.5).exp(),
            })
            .collect();
        starts.push(jitter);
    }
    starts.truncate(cfg.restarts.max(1));

    let accept = |z: &[f64]| {
        let (rv, rs, ok) = prob.assess(z);
        (ok && rv <= cfg.threshold && rs <= cfg.threshold, rv, rs)
    };
    for z0 in &starts {
        let mut f = |z: &[f64], g: &mut [f64]| prob.grad(z, g);
        let lcfg = LbfgsConfig {
            max_iter: cfg.max_iter,
            grad_tol: 1e-14,
            f_tol: 0.0,
            ..Default::default()
        };
        let mut opt = Lbfgs::new(&mut f, z0, &lower, &upper, lcfg);
        let mut z = opt.x().to_vec();
        while opt.iters() < cfg.max_iter {
            let st = opt.step(&mut f);
            z = opt.x().to_vec();
            if accept(&z).0 || st != StepStatus::Progress {
                break;
            }
        }
        if !accept(&z).0 {
            let mut obj = |v: &[f64]| prob.objective(v);
            z = nelder_mead(&mut obj, &z, &lower, &upper, 0.05, 400 * z.len().max(1), 1e-20).x;
        }
        let (ok, rv, rs) = accept(&z);
        if ok {
            let e = prob.assemble(&z);
            let pieces: Vec<Cubic<f64>> = (0..e.coefs.len())
                .map(|k| Cubic {
                    a: e.knots[k],
                    b: e.knots[k + 1],
                    c: e.coefs[k],
                })
                .collect();
            return Ok(C2Fit {
                spline: CubicSpline::from_pieces(&pieces)?,
                status: C2Status::Exact,
                knots: e.knots,
                values: e.values,
                max_value_residual: rv,
                max_slope_residual: rs,
            });
        }
    }
    let spline = c0.to_spline().expect("bounded part is non-empty");
    Ok(C2Fit {
        knots: spline.knots().to_vec(),
        values: Vec::new(),
        spline,
        status: C2Status::FallbackC0,
        max_value_residual: 0.0,
        max_slope_residual: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubic::piece_index;
    use crate::semantics::{extract_semantics, TailProps};

    #[test]
    fn layout_of_four_bounded_motifs() {
        let c: Composition = "+-b,--b,-+b,++b,+-h".parse().unwrap();
        let l = C2Layout::new(&c).unwrap();
        assert_eq!(l.n_params(), 20);
        assert_eq!(l.n_fixed(), 12);
        assert_eq!(l.free_names(), ["v0", "t1", "v2", "t3", "v3", "t5", "v6", "t7"]);
        assert_eq!(l.determined, vec![1, 5, 7]);
    }

    #[test]
    fn layout_of_single_maximum() {
        let c: Composition = "+-b,--u".parse().unwrap();
        let l = C2Layout::new(&c).unwrap();
        assert_eq!(l.free_names(), ["v0", "t1"]);
        assert_eq!(l.determined, vec![1]);
        assert_eq!(l.n_params(), 8);
    }

    #[test]
    fn fits_single_maximum_exactly() {
        let c: Composition = "+-b,--u".parse().unwrap();
        let p = PropertySet {
            t: vec![0.0, 1.0],
            x: vec![0.0, 1.0],
            d1_start: 2.0,
            d1_end: 0.0,
            d2_end: -2.0,
            tail: TailProps::Gamma(1.0),
        };
        let fit = predict_c2(&c, &p, &C2Config::default()).unwrap();
        assert_eq!(fit.status, C2Status::Exact);
        assert!((fit.spline.eval(1.0, 0).unwrap() - 1.0).abs() <= 1e-3);
        assert!(fit.spline.eval(1.0, 1).unwrap().abs() <= 1e-3);
    }

    #[test]
    fn fits_two_motifs_and_conforms() {
        let c: Composition = "+-b,--b,-+h".parse().unwrap();
        let p = PropertySet {
            t: vec![0.0, 0.3, 1.0],
            x: vec![0.0, 1.0, 0.4],
            d1_start: 6.0,
            d1_end: -1.2857142857142856,
            d2_end: 0.0,
            tail: TailProps::Asymptote { h: 0.0, t_half: 2.0 },
        };
        let fit = predict_c2(&c, &p, &C2Config::default()).unwrap();
        assert_eq!(fit.status, C2Status::Exact);
        let ts: Vec<f64> = (0..2001).map(|i| i as f64 / 2000.0).collect();
        let xs: Vec<f64> = ts.iter().map(|&t| fit.spline.eval(t, 0).unwrap()).collect();
        assert_eq!(extract_semantics(&ts, &xs, None).unwrap().motifs, c.bounded());
        let det = |cfg: &C2Config| predict_c2(&c, &p, cfg).unwrap().values;
        assert_eq!(det(&C2Config::default()), det(&C2Config::default()));
    }

    #[test]
    fn fits_sine_like_bounded_part() {
        let c: Composition = "+-b,--b,-+b,++b,+-h".parse().unwrap();
        let mut p = PropertySet {
            t: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            x: vec![0.0, 1.0, 0.0, -1.0, 0.0],
            d1_start: 2.0,
            d1_end: 0.0,
            d2_end: 0.0,
            tail: TailProps::Asymptote { h: 1.0, t_half: 100.0 },
        };
        p.d1_end = predict_c0(&c, &p).unwrap().d1_end;
        let fit = predict_c2(&c, &p, &C2Config::default()).unwrap();
        assert_eq!(fit.status, C2Status::Exact);
        let ts: Vec<f64> = (0..4001).map(|i| i as f64 / 1000.0).collect();
        let xs: Vec<f64> = ts.iter().map(|&t| fit.spline.eval(t, 0).unwrap()).collect();
        assert_eq!(extract_semantics(&ts, &xs, None).unwrap().motifs, c.bounded());
        for w in fit.spline.knots()[1..fit.spline.n_pieces()].iter() {
            let k = piece_index(fit.spline.knots(), *w);
            let (l, r) = (fit.spline.piece(k - 1), fit.spline.piece(k));
            for o in 0..3 {
                assert!((l.eval_at(*w, o) - r.eval_at(*w, o)).abs() < 1e-9);
            }
        }
    }
}
