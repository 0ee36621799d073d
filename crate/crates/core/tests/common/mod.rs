//! Randomized case generators and checks shared by the property tests and
//! the acceptance harness. Every check returns `Err` with a description of
//! the first violation it finds.

#![allow(dead_code)]

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semode_core::basis::BasisSet;
use semode_core::comp_map::{optimal_partition, run_is_valid};
use semode_core::cubic::{integrate_twice, PiecewiseLinear};
use semode_core::datasets::Sample;
use semode_core::prop_map::{realize, Constraints, Ranges, TrainConfig, TrainingProblem};
use semode_core::semantics::{
    as_bounded, conforms_relaxed, enumerate_compositions, extract_semantics, min_half_life, shape_runs, LibraryFilter,
};
use semode_core::traj_c0::{c0_pieces, derivative_range, predict_c0, BoundedTrajectory};
use semode_core::traj_c2::{predict_c2, C2Config, C2Status};
use semode_core::unbounded::{measure_tail_props, predict_tail};
use semode_core::{Composition, Motif, PropertySet, TailProps};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Compositions of up to three motifs with at least one bounded motif.
pub fn bounded_library() -> Vec<Composition> {
    enumerate_compositions(3, &LibraryFilter::default()).into_iter().filter(|c| c.n_bounded() > 0).collect()
}

/// A valid property set for `c` with `d1_start` at fraction `u` of its range
/// and end derivatives taken from the C⁰ solution.
pub fn random_properties(c: &Composition, u: f64, rng: &mut ChaCha8Rng) -> PropertySet {
    let nb = c.n_bounded();
    let mut t = vec![rng.random_range(-1.0..1.0)];
    let mut x = vec![rng.random_range(-1.0..1.0)];
    for m in c.bounded() {
        t.push(t.last().unwrap() + rng.random_range(0.2..1.0));
        x.push(x.last().unwrap() + m.mon_sign() * rng.random_range(0.2..1.5));
    }
    let kappa = (x[1] - x[0]) / (t[1] - t[0]);
    let (lo, hi) = derivative_range(c.first(), c.transitions()[0], kappa).unwrap();
    let d1_start = lo + u * (hi - lo);
    let tr = c0_pieces(&c.transitions(), &t, &x, d1_start).unwrap();
    let last = c.last();
    let (x_end, t_end) = (x[nb], t[nb]);
    let tail = match last.kind() {
        semode_core::semantics::MotifKind::Asymptote => {
            let h = x_end + last.mon_sign() * rng.random_range(0.2..2.0);
            let t_half = t_end + min_half_life(x_end, h, tr.d1_end) * rng.random_range(1.0..3.0);
            TailProps::Asymptote { h, t_half }
        }
        _ => TailProps::Gamma(rng.random_range(0.3..3.0)),
    };
    PropertySet { t, x, d1_start, d1_end: tr.d1_end, d2_end: tr.d2_end, tail }
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (Composition, PropertySet) {
    let lib = bounded_library();
    let c = lib[rng.random_range(0..lib.len())].clone();
    let u = rng.random_range(0.02..0.98);
    let p = random_properties(&c, u, rng);
    (c, p)
}

fn sample_bounded(tr: &BoundedTrajectory, a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let ts = grid(a, b, n);
    let xs = ts.iter().map(|&t| tr.eval(t, 0)).collect();
    (ts, xs)
}

/// The C⁰ trajectory interpolates the transition points, starts with
/// `d1_start`, and its bounded part followed by the tail has the requested
/// shape (straight stretches allowed between two inflections).
pub fn check_c0(c: &Composition, p: &PropertySet) -> Result<(), String> {
    let tr = predict_c0(c, p).map_err(|e| format!("{c}: {e}"))?;
    for (i, (&t, &x)) in p.t.iter().zip(&p.x).enumerate() {
        let v = tr.eval(t, 0);
        if (v - x).abs() > 1e-12 * (1.0 + x.abs()) {
            return Err(format!("{c}: x(t[{i}]) = {v}, expected {x}"));
        }
    }
    if (tr.eval(p.t[0], 1) - p.d1_start).abs() > 1e-12 * (1.0 + p.d1_start.abs()) {
        return Err(format!("{c}: wrong initial slope"));
    }
    let (t0, t_end) = (p.t[0], p.t_end());
    let tail = predict_tail(c.last(), &p.tail, t_end, p.x_end(), tr.d1_end, tr.d2_end).map_err(|e| format!("{c}: {e}"))?;
    let horizon = match p.tail {
        TailProps::Asymptote { t_half, .. } => 2.0 * (t_half - t_end),
        TailProps::Gamma(_) => t_end - t0,
    };
    let mut ts = grid(t0, t_end, 6001);
    ts.extend(grid(t_end, t_end + horizon, 2001).into_iter().skip(1));
    let xs: Vec<f64> = ts.iter().map(|&t| if t < t_end { tr.eval(t, 0) } else { tail.eval(t, 0) }).collect();
    let runs = shape_runs(&ts, &xs, None).map_err(|e| format!("{c}: {e}"))?;
    let mut expected = c.bounded().to_vec();
    expected.push(as_bounded(c.last()));
    if conforms_relaxed(&expected, &runs) {
        Ok(())
    } else {
        Err(format!("{c}: extracted runs {runs:?} for {p:?}"))
    }
}

/// The six (first motif, nature of `t_1`) rows of the initial-slope table,
/// each as the shortest composition exhibiting it.
pub fn table_rows() -> Vec<Composition> {
    ["++b,+-h", "+-b,--u", "+-b,--b,-+h", "-+b,++u", "-+b,++b,+-h", "--b,-+h"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

fn bounded_shape(c: &Composition, p: &PropertySet) -> Result<Vec<Motif>, String> {
    let tr = c0_pieces(&c.transitions(), &p.t, &p.x, p.d1_start).map_err(|e| e.to_string())?;
    let (ts, xs) = sample_bounded(&tr, p.t[0], p.t_end(), 20001);
    extract_semantics(&ts, &xs, None).map(|e| e.motifs).map_err(|e| e.to_string())
}

/// Inside the admissible `d1_start` interval the bounded part keeps the
/// requested motifs; 1% outside either end it does not.
pub fn check_sharpness(c: &Composition, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (a, b) = semode_core::traj_c0::range_factors(c.first(), c.transitions()[0]).map_err(|e| e.to_string())?;
    let mut p = random_properties(c, 0.5, rng);
    let kappa = (p.x[1] - p.x[0]) / (p.t[1] - p.t[0]);
    let (lo, hi) = (a.min(b), a.max(b));
    for f in [lo + 0.01 * (hi - lo), 0.5 * (lo + hi), hi - 0.01 * (hi - lo)] {
        p.d1_start = f * kappa;
        let got = bounded_shape(c, &p)?;
        if got != c.bounded() {
            return Err(format!("{c}: d1_start = {f}·kappa inside the range gave {got:?}"));
        }
    }
    for f in [lo - 0.01, hi + 0.01] {
        p.d1_start = f * kappa;
        if let Ok(got) = bounded_shape(c, &p) {
            if got == c.bounded() {
                return Err(format!("{c}: d1_start = {f}·kappa outside the range still conforms"));
            }
        }
    }
    Ok(())
}

pub enum C2Outcome {
    Exact,
    Fallback,
}

/// An exact C² fit meets the threshold, is continuous to second order at
/// every interior knot and has the requested bounded shape.
pub fn check_c2(c: &Composition, p: &PropertySet, cfg: &C2Config) -> Result<C2Outcome, String> {
    let fit = predict_c2(c, p, cfg).map_err(|e| format!("{c}: {e}"))?;
    if fit.status == C2Status::FallbackC0 {
        return Ok(C2Outcome::Fallback);
    }
    if fit.max_value_residual > cfg.threshold || fit.max_slope_residual > cfg.threshold {
        return Err(format!("{c}: residuals {} / {}", fit.max_value_residual, fit.max_slope_residual));
    }
    let s = &fit.spline;
    for (i, &x) in p.x.iter().enumerate() {
        let v = s.eval(p.t[i], 0).map_err(|e| e.to_string())?;
        if (v - x).abs() > cfg.threshold {
            return Err(format!("{c}: x(t[{i}]) = {v}, expected {x}"));
        }
    }
    let scale = p.x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for k in 1..s.n_pieces() {
        let (l, r) = (s.piece(k - 1), s.piece(k));
        let knot = r.a;
        for order in 0..3 {
            let (a, b) = (l.eval_at(knot, order), r.eval_at(knot, order));
            if (a - b).abs() > 1e-9 * scale.max(a.abs()) {
                return Err(format!("{c}: order-{order} jump {} at knot {knot}", a - b));
            }
        }
    }
    let got = derivative_shape(&grid(p.t[0], p.t_end(), 20001), |t, o| s.eval_unchecked(t, o));
    if got != c.bounded() {
        return Err(format!("{c}: exact C² fit has shape {got:?}"));
    }
    Ok(C2Outcome::Exact)
}

/// Motif sequence read off the signs of exact first and second derivatives.
/// Points where either vanishes and single-sample flickers are ignored.
pub fn derivative_shape(ts: &[f64], f: impl Fn(f64, u8) -> f64) -> Vec<Motif> {
    let mut labels: Vec<(bool, bool, usize)> = Vec::new();
    for &t in ts {
        let (d1, d2) = (f(t, 1), f(t, 2));
        if d1 == 0.0 || d2 == 0.0 {
            continue;
        }
        let lab = (d1 > 0.0, d2 > 0.0);
        match labels.last_mut() {
            Some(l) if (l.0, l.1) == lab => l.2 += 1,
            _ => labels.push((lab.0, lab.1, 1)),
        }
    }
    let mut out: Vec<Motif> = Vec::new();
    for (inc, convex, n) in labels {
        let m = Motif::from_signs(inc, convex, semode_core::semantics::MotifKind::Bounded).unwrap();
        if n >= 2 && out.last() != Some(&m) {
            out.push(m);
        }
    }
    out
}

pub const UNBOUNDED: [Motif; 6] = [
    Motif::IncConvexU,
    Motif::IncConcaveU,
    Motif::DecConvexU,
    Motif::DecConcaveU,
    Motif::IncConcaveH,
    Motif::DecConvexH,
];

/// Tail junction, midpoint identity and measured growth limits.
pub fn check_tail(m: Motif, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let s = m.mon_sign();
    let t_end = rng.random_range(0.0..2.0);
    let x_end = rng.random_range(-1.0..1.0);
    let d1 = s * rng.random_range(0.1..2.0);
    let d2 = if m.convex() == m.increasing() && m.kind() == semode_core::semantics::MotifKind::Divergent {
        s * rng.random_range(0.05..2.0)
    } else {
        0.0
    };
    let props = match m.kind() {
        semode_core::semantics::MotifKind::Asymptote => {
            let h = x_end + s * rng.random_range(0.2..2.0);
            TailProps::Asymptote { h, t_half: t_end + min_half_life(x_end, h, d1) * rng.random_range(1.0..20.0) }
        }
        _ => TailProps::Gamma(rng.random_range(0.3..3.0)),
    };
    let tail = predict_tail(m, &props, t_end, x_end, d1, d2).map_err(|e| format!("{m}: {e}"))?;
    for (order, want) in [(0u8, x_end), (1, d1), (2, d2)] {
        let got = tail.eval(t_end, order);
        if (got - want).abs() > 1e-9 * (1.0 + want.abs()) {
            return Err(format!("{m}: order-{order} junction value {got}, expected {want}"));
        }
    }
    let measured = measure_tail_props(&tail, 1e3).map_err(|e| format!("{m}: {e}"))?;
    match (props, measured) {
        (TailProps::Asymptote { h, t_half }, TailProps::Asymptote { h: mh, .. }) => {
            let mid = tail.eval(t_half, 0);
            if (mid - 0.5 * (x_end + h)).abs() > 1e-6 {
                return Err(format!("{m}: x(t_half) = {mid}, midpoint {}", 0.5 * (x_end + h)));
            }
            if (mh - h).abs() > 1e-6 * (1.0 + h.abs()) {
                return Err(format!("{m}: settles at {mh}, not {h}"));
            }
        }
        (TailProps::Gamma(g), TailProps::Gamma(mg)) => {
            if (mg - g).abs() > 0.01 * g {
                return Err(format!("{m}: measured gamma {mg}, built with {g}"));
            }
        }
        (a, b) => return Err(format!("{m}: measured {b:?} for {a:?}")),
    }
    Ok(())
}

fn lex(a: &[usize], b: &[usize], comps: &[Composition]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = comps[*x].indices().cmp(&comps[*y].indices());
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Exhaustive search over every admissible partition.
pub fn brute_partition(x0: &[f64], loss: &[Vec<f64>], comps: &[Composition], max_b: usize) -> Option<(f64, Vec<usize>, Vec<usize>)> {
    let d = x0.len();
    let k = comps.len();
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for cuts in 0u32..(1 << (d - 1)) {
        let mut starts = vec![0];
        starts.extend((1..d).filter(|i| cuts & (1 << (i - 1)) != 0));
        let nb = starts.len();
        if nb > max_b {
            continue;
        }
        let ends: Vec<usize> = starts[1..].iter().copied().chain([d]).collect();
        if starts.iter().zip(&ends).any(|(&a, &b)| !run_is_valid(x0, a, b)) {
            continue;
        }
        for code in 0..k.pow(nb as u32) {
            let labels: Vec<usize> = (0..nb).map(|j| code / k.pow(j as u32) % k).collect();
            if labels.windows(2).any(|w| w[0] == w[1]) {
                continue;
            }
            let total: f64 = starts
                .iter()
                .zip(&ends)
                .zip(&labels)
                .map(|((&a, &b), &c)| loss[a..b].iter().map(|r| r[c]).sum::<f64>())
                .sum();
            let wins = match &best {
                None => true,
                Some(b) => match total.total_cmp(&b.0) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => {
                        nb < b.1.len() || (nb == b.1.len() && lex(&labels, &b.2, comps) == Ordering::Less)
                    }
                },
            };
            if wins {
                best = Some((total, starts.clone(), labels));
            }
        }
    }
    best
}

/// Random instance with integer losses so that ties are common and sums exact.
pub fn check_partition(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let pool: Vec<Composition> = ["+-h", "-+h", "++u", "--u"].iter().map(|s| s.parse().unwrap()).collect();
    let d = rng.random_range(2..=12);
    let k = rng.random_range(1..=4);
    let max_b = rng.random_range(1..=3);
    let comps = &pool[..k];
    let mut x0 = vec![0.0];
    for _ in 1..d {
        x0.push(x0.last().unwrap() + rng.random_range(0.1..2.0));
    }
    let loss: Vec<Vec<f64>> = (0..d).map(|_| (0..k).map(|_| rng.random_range(0..4) as f64).collect()).collect();
    let dp = optimal_partition(&x0, &loss, comps, max_b);
    let brute = brute_partition(&x0, &loss, comps, max_b);
    match (dp, brute) {
        (Err(_), None) => Ok(()),
        (Ok(p), Some((cost, starts, labels))) => {
            let got: (Vec<usize>, Vec<usize>) =
                (p.runs.iter().map(|r| r.start).collect(), p.runs.iter().map(|r| r.composition).collect());
            if p.cost == cost && got == (starts.clone(), labels.clone()) {
                Ok(())
            } else {
                Err(format!("D={d} K={k} I={max_b}: dp {got:?} cost {} vs brute {starts:?} {labels:?} cost {cost}", p.cost))
            }
        }
        (dp, brute) => Err(format!("D={d} K={k} I={max_b}: dp {dp:?} vs brute {brute:?}")),
    }
}

/// Samples generated by the realized composition at smoothly varying raw vectors.
fn gradient_problem_samples(c: &Composition, ranges: &Ranges, n: usize) -> Vec<Sample> {
    let arity = semode_core::prop_map::raw_arity(c);
    (0..n)
        .map(|i| {
            let x0 = i as f64 / (n - 1) as f64;
            let raw: Vec<f64> = (0..arity).map(|j| 0.3 * ((j + 1) as f64 * x0).sin() - 0.1 * j as f64).collect();
            let r = realize(&raw, c, ranges, &Constraints::default()).unwrap();
            let times = grid(0.0, 1.0, 20);
            let values = times.iter().map(|&t| r.eval(t) + 0.01 * (7.0 * t + x0).cos()).collect();
            Sample::new(i, x0, times, values).unwrap()
        })
        .collect()
}

/// Training-loss gradient against central differences at one random point.
pub fn check_gradient(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let lib = enumerate_compositions(3, &LibraryFilter::default());
    let c = lib[rng.random_range(0..lib.len())].clone();
    let ranges = Ranges::new(0.0, 1.0).unwrap();
    let samples = gradient_problem_samples(&c, &ranges, 8);
    let basis = BasisSet::new(0.0, 1.0).unwrap();
    let cons = Constraints::default();
    let cfg = TrainConfig::default();
    let prob = TrainingProblem::new(&c, &basis, ranges, &cons, samples.iter().collect(), &cfg);
    let w: Vec<f64> = (0..prob.n_weights()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut g = vec![0.0; w.len()];
    prob.loss_grad(&w, &mut g);
    let h = 1e-6;
    let fd: Vec<f64> = (0..w.len())
        .map(|j| {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            (prob.loss(&wp) - prob.loss(&wm)) / (2.0 * h)
        })
        .collect();
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut g.iter().zip(&fd).map(|(a, b)| a - b));
    let rel = diff / norm(&mut fd.iter().copied()).max(1e-8);
    if rel < 1e-4 {
        Ok(rel)
    } else {
        Err(format!("{c}: relative gradient error {rel}"))
    }
}

/// Largest gap, in units of the roundoff scale, between the spline's second
/// derivative and its piecewise-linear source at 1000 random points.
pub fn check_integrate_twice(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let n = rng.random_range(2..=10);
    let mut knots = vec![rng.random_range(-2.0..2.0)];
    for _ in 1..n {
        knots.push(knots.last().unwrap() + rng.random_range(0.05..1.0));
    }
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let pl = PiecewiseLinear::new(knots.clone(), values.clone()).unwrap();
    let spline = integrate_twice(&pl, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(knots[0]..=knots[n - 1]);
        let got = spline.eval(t, 2).map_err(|e| e.to_string())?;
        worst = worst.max((got - pl.eval(t)).abs() / (scale * f64::EPSILON));
    }
    if worst <= 16.0 {
        Ok(worst)
    } else {
        Err(format!("second derivative off by {worst} ulp-scale units"))
    }
}
