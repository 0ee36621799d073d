//! Property sub-maps: a basis expansion of x₀ gives a raw vector, and a fixed
//! chain of transforms turns any finite raw vector into valid properties.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::optim::{Lbfgs, LbfgsConfig, StepStatus};
use crate::scalar::{Dual, Scalar, MAX_DUAL};
use crate::semantics::{Composition, MotifKind, PropertySet, TailProps};
use crate::traj_c0::{c0_pieces, range_factors, BoundedTrajectory};
use crate::unbounded::{Tail, TailParam};

/// Raw properties are clamped to `[-RAW_LIMIT, RAW_LIMIT]` before transforming.
pub const RAW_LIMIT: f64 = 30.0;
const INTERVAL_FLOOR: f64 = 1e-4;
const RANGE_MARGIN: f64 = 1e-6;
const GAMMA_FLOOR: f64 = 0.02;
const T_END_FLOOR: f64 = 0.05;
const GAP_FLOOR: f64 = 1e-6;
const LN3: f64 = 1.098_612_288_668_109_8;

/// Time window the transforms map into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub t0: f64,
    pub t_max: f64,
}

impl Ranges {
    pub fn new(t0: f64, t_max: f64) -> Result<Self> {
        if !(t0.is_finite() && t_max.is_finite() && t_max > t0) {
            return Err(Error::InvalidInput(format!("bad time range [{t0}, {t_max}]")));
        }
        Ok(Ranges { t0, t_max })
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let t0 = samples.iter().filter_map(|s| s.times.first()).copied().fold(f64::INFINITY, f64::min);
        let t1 = samples.iter().filter_map(|s| s.times.last()).copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(t0, t1)
    }

    pub fn span(&self) -> f64 {
        self.t_max - self.t0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyName {
    XStart,
    TEnd,
    H,
    Gamma,
}

impl PropertyName {
    pub const ALL: [PropertyName; 4] = [Self::XStart, Self::TEnd, Self::H, Self::Gamma];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::XStart => "x_start",
            Self::TEnd => "t_end",
            Self::H => "h",
            Self::Gamma => "gamma",
        }
    }

    pub fn read(self, p: &PropertySet) -> Option<f64> {
        match (self, p.tail) {
            (Self::XStart, _) => Some(p.x_start()),
            (Self::TEnd, _) => Some(p.t_end()),
            (Self::H, TailProps::Asymptote { h, .. }) => Some(h),
            (Self::Gamma, TailProps::Gamma(g)) => Some(g),
            _ => None,
        }
    }
}

impl fmt::Display for PropertyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PropertyName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown property `{s}` (expected x_start, t_end, h or gamma)")))
    }
}

/// A fixed value or an open interval imposed on one property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Pinned { value: f64 },
    Bounded { lo: f64, hi: f64 },
}

impl Constraint {
    fn apply<S: Scalar>(&self, raw: S) -> S {
        match *self {
            Constraint::Pinned { value } => S::cst(value),
            Constraint::Bounded { lo, hi } => raw.sigmoid() * (hi - lo) + lo,
        }
    }

    fn invert(&self, v: f64) -> f64 {
        match *self {
            Constraint::Pinned { .. } => 0.0,
            Constraint::Bounded { lo, hi } => logit((v - lo) / (hi - lo)),
        }
    }

    pub fn admits(&self, v: f64) -> bool {
        match *self {
            Constraint::Pinned { value } => v == value,
            Constraint::Bounded { lo, hi } => v > lo && v < hi,
        }
    }

    fn lowest(&self) -> f64 {
        match *self {
            Constraint::Pinned { value } => value,
            Constraint::Bounded { lo, .. } => lo,
        }
    }

    fn check(&self, name: PropertyName) -> Result<()> {
        let ok = match *self {
            Constraint::Pinned { value } => value.is_finite(),
            Constraint::Bounded { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if !ok {
            return Err(Error::InvalidInput(format!("{name}: invalid constraint {self:?}")));
        }
        if name == PropertyName::Gamma && !(self.lowest() > 0.0) {
            return Err(Error::InvalidInput("gamma must stay positive".into()));
        }
        Ok(())
    }
}

/// Pins and bounds of one sub-map, keyed by property.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Constraints(BTreeMap<PropertyName, Constraint>);

impl Constraints {
    pub fn get(&self, name: PropertyName) -> Option<Constraint> {
        self.0.get(&name).copied()
    }

    pub fn set(&mut self, name: PropertyName, c: Constraint) -> Result<()> {
        c.check(name)?;
        self.0.insert(name, c);
        Ok(())
    }

    pub fn remove(&mut self, name: PropertyName) {
        self.0.remove(&name);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PropertyName, Constraint)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    /// Checks that every constraint applies to `c` within `ranges`.
    pub fn check_for(&self, c: &Composition, ranges: &Ranges) -> Result<()> {
        let kind = c.last().kind();
        for (name, con) in self.iter() {
            con.check(name)?;
            let bad = |why: &str| Err(Error::Precondition(format!("{name} for {c}: {why}")));
            match name {
                PropertyName::H if kind != MotifKind::Asymptote => return bad("no asymptote"),
                PropertyName::Gamma if kind != MotifKind::Divergent => return bad("no divergent tail"),
                PropertyName::TEnd if c.n_bounded() == 0 => return bad("t_end is fixed at t_0"),
                PropertyName::TEnd if !(con.lowest() > ranges.t0) => {
                    return bad("t_end must lie after t_0")
                }
                _ => {}
            }
        }
        if self.get(PropertyName::XStart).is_some() && self.get(PropertyName::H).is_some() {
            return Err(Error::Precondition(
                "x_start and h cannot both be constrained: x_start is derived from h".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    nb: usize,
    logits: usize,
    tail: usize,
    lone_d2: bool,
}

impl Layout {
    fn of(c: &Composition) -> Self {
        let nb = c.n_bounded();
        let last = c.last();
        Layout {
            nb,
            logits: if nb >= 2 { nb } else { 0 },
            tail: if last.kind() == MotifKind::Asymptote { 2 } else { 1 },
            lone_d2: nb == 0 && last.kind() == MotifKind::Divergent && last.convex() == last.increasing(),
        }
    }

    fn len(&self) -> usize {
        if self.nb > 0 {
            2 + self.logits + self.nb + 1 + self.tail
        } else {
            2 + self.lone_d2 as usize + self.tail
        }
    }

    fn tail_at(&self) -> usize {
        self.len() - self.tail
    }
}

/// Number of raw properties of `c`.
pub fn raw_arity(c: &Composition) -> usize {
    Layout::of(c).len()
}

/// Names of the raw slots, in order.
pub fn raw_names(c: &Composition) -> Vec<String> {
    let l = Layout::of(c);
    let mut out = vec!["x_start".to_string()];
    if l.nb > 0 {
        out.push("t_end".into());
        out.extend((1..=l.logits).map(|i| format!("interval_{i}")));
        out.extend((1..=l.nb).map(|i| format!("dx_{i}")));
        out.push("d1_start".into());
    } else {
        out.push("d1_end".into());
        if l.lone_d2 {
            out.push("d2_end".into());
        }
    }
    if l.tail == 2 {
        out.extend(["h".to_string(), "t_half".to_string()]);
    } else {
        out.push("gamma".into());
    }
    out
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    (p / (1.0 - p)).ln()
}

/// Strictly positive magnitude with a floor that survives rounding next to
/// values of order one.
fn gap<S: Scalar>(r: S) -> S {
    r.softplus() + GAP_FLOOR
}

fn inv_gap(y: f64) -> f64 {
    inv_softplus(y - GAP_FLOOR)
}

fn inv_softplus(y: f64) -> f64 {
    if !(y > 0.0) {
        -RAW_LIMIT
    } else if y > RAW_LIMIT {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// A property set in scalar type `S` together with its trajectory.
#[derive(Debug, Clone)]
pub struct Realized<S = f64> {
    pub t: Vec<S>,
    pub x: Vec<S>,
    pub d1_start: S,
    pub d1_end: S,
    pub d2_end: S,
    pub bounded: Option<BoundedTrajectory<S>>,
    pub tail: Tail<S>,
    param: TailParam<S>,
}

impl<S: Scalar> Realized<S> {
    /// C⁰ trajectory value at `t`.
    pub fn eval(&self, t: S) -> S {
        match &self.bounded {
            Some(b) if t.value() < self.t[self.t.len() - 1].value() => b.eval(t, 0),
            _ => self.tail.eval(t, 0),
        }
    }

    pub fn slope_jumps(&self) -> &[S] {
        self.bounded.as_ref().map_or(&[], |b| &b.slope_jumps)
    }

    pub fn to_properties(&self) -> PropertySet {
        PropertySet {
            t: self.t.iter().map(|v| v.value()).collect(),
            x: self.x.iter().map(|v| v.value()).collect(),
            d1_start: self.d1_start.value(),
            d1_end: self.d1_end.value(),
            d2_end: self.d2_end.value(),
            tail: match self.param {
                TailParam::Gamma(g) => TailProps::Gamma(g.value()),
                TailParam::Asymptote { h, t_half } => TailProps::Asymptote {
                    h: h.value(),
                    t_half: t_half.value(),
                },
            },
        }
    }
}

/// Maps a raw vector to properties of `c` (and their C⁰ trajectory). Any
/// finite input yields properties that pass validation.
pub fn realize<S: Scalar>(raw: &[S], c: &Composition, ranges: &Ranges, cons: &Constraints) -> Result<Realized<S>> {
    let lay = Layout::of(c);
    if raw.len() != lay.len() {
        return Err(Error::Structural(format!(
            "{c} takes {} raw properties, got {}",
            lay.len(),
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.value().is_finite()) {
        return Err(Error::Numeric("non-finite raw property".into()));
    }
    let r: Vec<S> = raw.iter().map(|v| v.clamp_to(-RAW_LIMIT, RAW_LIMIT)).collect();
    let span = ranges.span();
    let last = c.last();
    let s = last.mon_sign();
    let ta = lay.tail_at();
    let h_con = cons.get(PropertyName::H);
    let free_start = |v: S| cons.get(PropertyName::XStart).map_or(v, |k| k.apply(v));
    let asym_h = |x_end: S| match h_con {
        Some(k) => k.apply(r[ta]),
        None => x_end + gap(r[ta]) * s,
    };

    if lay.nb == 0 {
        let t0 = S::cst(ranges.t0);
        let d1_end = r[1].softplus() * s;
        let d2_end = if lay.lone_d2 { r[2].softplus() * s } else { S::zero() };
        let (x_end, param) = match last.kind() {
            MotifKind::Asymptote => {
                let (x_end, h) = match h_con {
                    Some(k) => {
                        let h = k.apply(r[ta]);
                        (h - gap(r[0]) * s, h)
                    }
                    None => {
                        let x = free_start(r[0]);
                        (x, asym_h(x))
                    }
                };
                let t_half = half_life(t0, x_end, h, d1_end, r[ta + 1], span);
                (x_end, TailParam::Asymptote { h, t_half })
            }
            _ => (free_start(r[0]), TailParam::Gamma(gamma(r[ta], cons, span))),
        };
        return Ok(Realized {
            t: vec![t0],
            x: vec![x_end],
            d1_start: d1_end,
            d1_end,
            d2_end,
            bounded: None,
            tail: Tail::build(last, param, t0, x_end, d1_end, d2_end),
            param,
        });
    }

    let nb = lay.nb;
    let t0 = S::cst(ranges.t0);
    let t_end = match cons.get(PropertyName::TEnd) {
        Some(k) => k.apply(r[1]),
        None => t0 + (r[1].sigmoid() * (1.0 - T_END_FLOOR) + T_END_FLOOR) * span,
    };
    let mut t = Vec::with_capacity(nb + 1);
    t.push(t0);
    if nb == 1 {
        t.push(t_end);
    } else {
        let logits = &r[2..2 + nb];
        let mx = logits.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<S> = logits.iter().map(|&v| (v - mx).exp()).collect();
        let total = e.iter().fold(S::zero(), |a, &b| a + b);
        let mut acc = S::zero();
        for (i, ei) in e.iter().enumerate() {
            if i + 1 == nb {
                t.push(t_end);
            } else {
                acc += *ei / total * (1.0 - nb as f64 * INTERVAL_FLOOR) + INTERVAL_FLOOR;
                t.push(t0 + acc * (t_end - t0));
            }
        }
    }
    let bounded = c.bounded();
    let dx_at = 2 + lay.logits;
    let diffs: Vec<S> = (0..nb)
        .map(|i| gap(r[dx_at + i]) * bounded[i].mon_sign())
        .collect();
    let mut x = vec![S::zero(); nb + 1];
    let mut h_fixed = None;
    if let Some(k) = h_con {
        let h = k.apply(r[ta]);
        x[nb] = h - gap(r[0]) * s;
        for i in (0..nb).rev() {
            x[i] = x[i + 1] - diffs[i];
        }
        h_fixed = Some(h);
    } else {
        x[0] = free_start(r[0]);
        for i in 0..nb {
            x[i + 1] = x[i] + diffs[i];
        }
    }
    let transitions = c.transitions();
    let kappa = diffs[0] / (t[1] - t[0]);
    let (a, b) = range_factors(c.first(), transitions[0])?;
    let u = r[dx_at + nb].sigmoid() * (1.0 - 2.0 * RANGE_MARGIN) + RANGE_MARGIN;
    let d1_start = kappa * (u * (b - a) + a);
    let traj = c0_pieces(&transitions, &t, &x, d1_start)?;
    let (d1_end, d2_end) = (traj.d1_end, traj.d2_end);
    let x_end = x[nb];
    let param = match last.kind() {
        MotifKind::Asymptote => {
            let h = h_fixed.unwrap_or_else(|| asym_h(x_end));
            TailParam::Asymptote {
                h,
                t_half: half_life(t_end, x_end, h, d1_end, r[ta + 1], span),
            }
        }
        _ => TailParam::Gamma(gamma(r[ta], cons, span)),
    };
    Ok(Realized {
        tail: Tail::build(last, param, t_end, x_end, d1_end, d2_end),
        t,
        x,
        d1_start,
        d1_end,
        d2_end,
        bounded: Some(traj),
        param,
    })
}

fn gamma<S: Scalar>(r: S, cons: &Constraints, span: f64) -> S {
    match cons.get(PropertyName::Gamma) {
        Some(k) => k.apply(r),
        None => (r.softplus() + GAMMA_FLOOR) * span,
    }
}

fn half_life<S: Scalar>(t_end: S, x_end: S, h: S, d1_end: S, r: S, span: f64) -> S {
    let shortest = (h - x_end) / d1_end * (LN3 * 0.5);
    t_end + shortest + r.softplus() * span
}

/// Properties of `c` for a raw vector.
pub fn raw_to_properties(raw: &[f64], c: &Composition, ranges: &Ranges, cons: &Constraints) -> Result<PropertySet> {
    Ok(realize(raw, c, ranges, cons)?.to_properties())
}

/// Raw vector reproducing `p` as closely as the transforms allow
/// (constrained and out-of-range values are projected).
pub fn properties_to_raw(p: &PropertySet, c: &Composition, ranges: &Ranges, cons: &Constraints) -> Result<Vec<f64>> {
    let lay = Layout::of(c);
    let n = c.n_bounded() + 1;
    if p.t.len() != n || p.x.len() != n {
        return Err(Error::Structural(format!("{c} needs {n} transition points")));
    }
    let span = ranges.span();
    let last = c.last();
    let s = last.mon_sign();
    let ta = lay.tail_at();
    let mut r = vec![0.0; lay.len()];
    let h_con = cons.get(PropertyName::H);
    let x_end = p.x_end();
    let tail_h = match p.tail {
        TailProps::Asymptote { h, .. } => Some(h),
        _ => None,
    };
    r[0] = match (h_con, tail_h) {
        (Some(_), Some(h)) => inv_gap(s * (h - x_end)),
        _ => match cons.get(PropertyName::XStart) {
            Some(k) => k.invert(p.x_start()),
            None => p.x_start(),
        },
    };
    let d1_end;
    if lay.nb == 0 {
        r[1] = inv_softplus(s * p.d1_end);
        if lay.lone_d2 {
            r[2] = inv_softplus(s * p.d2_end);
        }
        d1_end = s * inv_softplus(s * p.d1_end).clamp(-RAW_LIMIT, RAW_LIMIT).softplus();
    } else {
        let nb = lay.nb;
        let t_end = p.t_end();
        r[1] = match cons.get(PropertyName::TEnd) {
            Some(k) => k.invert(t_end),
            None => logit(((t_end - ranges.t0) / span - T_END_FLOOR) / (1.0 - T_END_FLOOR)),
        };
        if nb >= 2 {
            let whole = t_end - p.t[0];
            for i in 0..nb {
                let w = (p.t[i + 1] - p.t[i]) / whole;
                let q = (w - INTERVAL_FLOOR) / (1.0 - nb as f64 * INTERVAL_FLOOR);
                r[2 + i] = q.max(1e-13).ln();
            }
        }
        let dx_at = 2 + lay.logits;
        for i in 0..nb {
            r[dx_at + i] = inv_gap((p.x[i + 1] - p.x[i]).abs());
        }
        let kappa = (p.x[1] - p.x[0]) / (p.t[1] - p.t[0]);
        let (a, b) = range_factors(c.first(), c.transitions()[0])?;
        let u = (p.d1_start / kappa - a) / (b - a);
        r[dx_at + nb] = logit((u - RANGE_MARGIN) / (1.0 - 2.0 * RANGE_MARGIN));
        d1_end = c0_pieces(&c.transitions(), &p.t, &p.x, p.d1_start)?.d1_end;
    }
    match p.tail {
        TailProps::Gamma(g) => {
            r[ta] = match cons.get(PropertyName::Gamma) {
                Some(k) => k.invert(g),
                None => inv_softplus(g / span - GAMMA_FLOOR),
            };
        }
        TailProps::Asymptote { h, t_half } => {
            r[ta] = match h_con {
                Some(k) => k.invert(h),
                None => inv_gap(s * (h - x_end)),
            };
            let shortest = (h - x_end) / d1_end * (LN3 * 0.5);
            r[ta + 1] = inv_softplus((t_half - p.t_end() - shortest) / span);
        }
    }
    Ok(r.into_iter().map(|v| v.clamp(-RAW_LIMIT, RAW_LIMIT)).collect())
}

/// Moves `p` onto `cons` and keeps its shape otherwise: a new start value
/// shifts every level, a new end time stretches the transition times.
pub fn project_properties(p: &mut PropertySet, cons: &Constraints) {
    for (name, con) in cons.iter() {
        let Some(cur) = name.read(p) else { continue };
        let target = match con {
            Constraint::Pinned { value } => value,
            Constraint::Bounded { lo, hi } => {
                let pad = 1e-3 * (hi - lo);
                cur.clamp(lo + pad, hi - pad)
            }
        };
        match name {
            PropertyName::XStart => {
                let d = target - cur;
                p.x.iter_mut().for_each(|x| *x += d);
                if let TailProps::Asymptote { h, .. } = &mut p.tail {
                    *h += d;
                }
            }
            PropertyName::TEnd => {
                let t0 = p.t[0];
                let k = (target - t0) / (cur - t0);
                p.t.iter_mut().for_each(|t| *t = t0 + (*t - t0) * k);
                if let TailProps::Asymptote { t_half, .. } = &mut p.tail {
                    *t_half += target - cur;
                }
            }
            PropertyName::H => {
                if let TailProps::Asymptote { h, .. } = &mut p.tail {
                    *h = target;
                }
            }
            PropertyName::Gamma => p.tail = TailProps::Gamma(target),
        }
    }
}

fn sample_mse<S: Scalar>(r: &Realized<S>, sample: &Sample) -> S {
    let mut acc = S::zero();
    for (&t, &y) in sample.times.iter().zip(&sample.values) {
        acc += (r.eval(S::cst(t)) - y).sq();
    }
    acc / sample.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleFitConfig {
    pub max_iter: usize,
    /// Number of data-driven starting points (fractions of the span for t_end).
    pub n_starts: usize,
}

impl Default for SampleFitConfig {
    fn default() -> Self {
        SampleFitConfig {
            max_iter: 100,
            n_starts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFit {
    pub loss: f64,
    pub raw: Vec<f64>,
}

fn interp(sample: &Sample, t: f64) -> f64 {
    let k = crate::cubic::piece_index(&sample.times, t);
    let (t0, t1) = (sample.times[k], sample.times[k + 1]);
    let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    sample.values[k] * (1.0 - w) + sample.values[k + 1] * w
}

/// Data-driven starting raw vector: equally spaced transitions ending at
/// `frac` of the span, values read off the observations.
pub fn initial_raw(sample: &Sample, c: &Composition, ranges: &Ranges, cons: &Constraints, frac: f64) -> Vec<f64> {
    let lay = Layout::of(c);
    let mut r = vec![0.0; lay.len()];
    let y0 = sample.values[0];
    let yr = sample.values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - sample.values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let fallback = 0.05 * yr + 1e-3;
    let last = c.last();
    let s = last.mon_sign();
    let span = ranges.span();
    r[0] = cons.get(PropertyName::XStart).map_or(y0, |k| k.invert(y0));
    let mut x_end = y0;
    let mut t_end = ranges.t0;
    if lay.nb == 0 {
        let slope = (sample.values[1] - y0) / (sample.times[1] - sample.times[0]);
        r[1] = inv_softplus((s * slope).max(fallback / span));
        if lay.lone_d2 {
            r[2] = inv_softplus(fallback / (span * span));
        }
    } else {
        let nb = lay.nb;
        t_end = ranges.t0 + frac * span;
        r[1] = match cons.get(PropertyName::TEnd) {
            Some(k) => k.invert(t_end),
            None => logit((frac - T_END_FLOOR) / (1.0 - T_END_FLOOR)),
        };
        let bounded = c.bounded();
        let mut x_prev = y0;
        for i in 0..nb {
            let ti = ranges.t0 + (t_end - ranges.t0) * (i + 1) as f64 / nb as f64;
            let xi = interp(sample, ti);
            let d = xi - x_prev;
            let mag = if d * bounded[i].mon_sign() > fallback { d.abs() } else { fallback };
            r[2 + lay.logits + i] = inv_gap(mag);
            x_prev += mag * bounded[i].mon_sign();
        }
        x_end = x_prev;
    }
    let ta = lay.tail_at();
    if lay.tail == 2 {
        let y_last = *sample.values.last().unwrap();
        let beyond = s * (y_last - x_end);
        let gap = if beyond > fallback { 2.0 * beyond } else { (0.1 * yr).max(1e-2) };
        r[ta] = match cons.get(PropertyName::H) {
            Some(k) => k.invert(x_end + s * gap),
            None => inv_gap(gap),
        };
        r[ta + 1] = inv_softplus(0.3 * (ranges.t_max - t_end).max(0.05 * span) / span);
        if cons.get(PropertyName::H).is_some() {
            r[0] = inv_gap(gap);
        }
    }
    r
}

fn dual_eval<F>(z: &[f64], g: &mut [f64], f: F) -> f64
where
    F: Fn(&[Dual]) -> Option<Dual>,
{
    let n = z.len();
    let zd: Vec<Dual> = z.iter().enumerate().map(|(i, &v)| Dual::variable(v, i, n)).collect();
    match f(&zd) {
        Some(out) if out.re.is_finite() => {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = out.d(i);
            }
            out.re
        }
        _ => {
            g.iter_mut().for_each(|v| *v = 0.0);
            f64::INFINITY
        }
    }
}

/// Local refinement of a per-sample fit from `start`.
pub fn refine_sample(
    sample: &Sample,
    c: &Composition,
    ranges: &Ranges,
    cons: &Constraints,
    start: &[f64],
    max_iter: usize,
) -> SampleFit {
    let p = start.len();
    let lower = vec![-RAW_LIMIT; p];
    let upper = vec![RAW_LIMIT; p];
    let mut f = |z: &[f64], g: &mut [f64]| {
        dual_eval(z, g, |zd| realize(zd, c, ranges, cons).ok().map(|r| sample_mse(&r, sample)))
    };
    let lcfg = LbfgsConfig {
        max_iter,
        grad_tol: 1e-12,
        f_tol: 1e-12,
        ..Default::default()
    };
    let mut opt = Lbfgs::new(&mut f, start, &lower, &upper, lcfg);
    opt.run(&mut f);
    SampleFit {
        loss: opt.f(),
        raw: opt.x().to_vec(),
    }
}

/// Best per-sample fit of `c` in raw space; the loss is the trajectory MSE.
pub fn fit_sample(
    sample: &Sample,
    c: &Composition,
    ranges: &Ranges,
    cons: &Constraints,
    cfg: &SampleFitConfig,
) -> Result<SampleFit> {
    if sample.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "sample {} has {} observation(s); need at least 2",
            sample.id,
            sample.len()
        )));
    }
    let p = raw_arity(c);
    if p > MAX_DUAL {
        return Err(Error::InvalidInput(format!("{c} has too many raw properties ({p})")));
    }
    let mut best: Option<SampleFit> = None;
    let n = cfg.n_starts.max(1);
    for k in 0..n {
        let frac = if n == 1 { 0.5 } else { 0.2 + 0.7 * k as f64 / (n - 1) as f64 };
        let z0 = initial_raw(sample, c, ranges, cons, frac);
        let fit = refine_sample(sample, c, ranges, cons, &z0, cfg.max_iter);
        if fit.loss.is_finite() && best.as_ref().is_none_or(|b| fit.loss < b.loss) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::Convergence(format!("no finite fit of {c} to sample {}", sample.id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Scale of the first quasi-Newton step.
    pub learning_rate: f64,
    /// Weight of the squared end-derivative penalty.
    pub end_penalty: f64,
    /// Weight of the squared slope mismatch at interior inflections.
    pub mismatch_penalty: f64,
    pub max_iter: usize,
    pub patience: usize,
    pub seed: u64,
    /// Relative ridge used when initializing weights from per-sample fits.
    pub ridge: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            end_penalty: 1e-4,
            mismatch_penalty: 0.01,
            max_iter: 1000,
            patience: 50,
            seed: 0,
            ridge: 1e-6,
        }
    }
}

/// Learned map from x₀ to properties of one composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySubMap {
    pub composition: Composition,
    #[serde(rename = "basis_spec")]
    pub basis: BasisSet,
    /// One row per basis function, one column per raw property.
    pub weights: Vec<Vec<f64>>,
    #[serde(default, rename = "pinned")]
    pub constraints: Constraints,
    /// Pins and bounds laid over the predictions without retraining.
    #[serde(default, skip_serializing_if = "Constraints::is_empty")]
    pub overrides: Constraints,
    pub ranges: Ranges,
}

impl PropertySubMap {
    pub fn raw(&self, x0: f64) -> Vec<f64> {
        raw_from(&self.basis.eval(x0), &self.weights)
    }

    pub fn realize(&self, x0: f64) -> Result<Realized<f64>> {
        let r = realize(&self.raw(x0), &self.composition, &self.ranges, &self.constraints)?;
        if self.overrides.is_empty() {
            return Ok(r);
        }
        let mut p = r.to_properties();
        project_properties(&mut p, &self.overrides);
        let cons = self.effective_constraints();
        let raw = properties_to_raw(&p, &self.composition, &self.ranges, &cons)?;
        realize(&raw, &self.composition, &self.ranges, &cons)
    }

    /// Trained constraints with the overrides on top.
    pub fn effective_constraints(&self) -> Constraints {
        let mut out = self.constraints.clone();
        for (name, con) in self.overrides.iter() {
            out.0.insert(name, con);
        }
        out
    }

    pub fn predict(&self, x0: f64) -> Result<PropertySet> {
        Ok(self.realize(x0)?.to_properties())
    }

    pub fn n_raw(&self) -> usize {
        raw_arity(&self.composition)
    }

    pub fn check_shape(&self) -> Result<()> {
        let p = self.n_raw();
        if self.weights.len() != self.basis.len() || self.weights.iter().any(|r| r.len() != p) {
            return Err(Error::Structural(format!(
                "sub-map for {} needs a {}x{p} weight matrix",
                self.composition,
                self.basis.len()
            )));
        }
        Ok(())
    }
}

fn raw_from(b: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let p = w.first().map_or(0, Vec::len);
    let mut out = vec![0.0; p];
    for (bi, row) in b.iter().zip(w) {
        for (o, wv) in out.iter_mut().zip(row) {
            *o += bi * wv;
        }
    }
    out
}

/// Training objective of a sub-map as a function of its flattened weights.
pub struct TrainingProblem<'a> {
    pub composition: &'a Composition,
    pub ranges: Ranges,
    pub constraints: &'a Constraints,
    samples: Vec<&'a Sample>,
    rows: Vec<Vec<f64>>,
    n_basis: usize,
    n_raw: usize,
    mismatch: f64,
    end: f64,
}

impl<'a> TrainingProblem<'a> {
    pub fn new(
        composition: &'a Composition,
        basis: &BasisSet,
        ranges: Ranges,
        constraints: &'a Constraints,
        samples: Vec<&'a Sample>,
        cfg: &TrainConfig,
    ) -> Self {
        let rows = samples.iter().map(|s| basis.eval(s.x0)).collect();
        TrainingProblem {
            composition,
            ranges,
            constraints,
            samples,
            rows,
            n_basis: basis.len(),
            n_raw: raw_arity(composition),
            mismatch: cfg.mismatch_penalty,
            end: cfg.end_penalty,
        }
    }

    pub fn n_weights(&self) -> usize {
        self.n_basis * self.n_raw
    }

    fn sample_loss<S: Scalar>(&self, raw: &[S], sample: &Sample) -> Option<S> {
        let r = realize(raw, self.composition, &self.ranges, self.constraints).ok()?;
        let mut l = sample_mse(&r, sample);
        for j in r.slope_jumps() {
            l += j.sq() * self.mismatch;
        }
        l += (r.d1_end.sq() + r.d2_end.sq()) * self.end;
        Some(l)
    }

    fn raw_at(&self, w: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_raw];
        for (b, bv) in self.rows[k].iter().enumerate() {
            for (p, o) in out.iter_mut().enumerate() {
                *o += bv * w[b * self.n_raw + p];
            }
        }
        out
    }

    /// Mean penalized loss at flattened weights `w` (row-major, basis by raw).
    pub fn loss(&self, w: &[f64]) -> f64 {
        let mut total = 0.0;
        for (k, s) in self.samples.iter().enumerate() {
            match self.sample_loss(&self.raw_at(w, k), s) {
                Some(l) if l.is_finite() => total += l,
                _ => return f64::INFINITY,
            }
        }
        total / self.samples.len() as f64
    }

    /// Loss and its gradient with respect to `w`.
    pub fn loss_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = self.samples.len() as f64;
        let mut total = 0.0;
        let mut g_raw = vec![0.0; self.n_raw];
        for (k, s) in self.samples.iter().enumerate() {
            let raw = self.raw_at(w, k);
            let l = dual_eval(&raw, &mut g_raw, |zd| self.sample_loss(zd, s));
            if !l.is_finite() {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::INFINITY;
            }
            total += l;
            for (b, bv) in self.rows[k].iter().enumerate() {
                for p in 0..self.n_raw {
                    grad[b * self.n_raw + p] += bv * g_raw[p] / n;
                }
            }
        }
        total / n
    }
}

/// Starting point of sub-map training.
#[derive(Debug, Clone, Copy)]
pub enum SubMapInit<'a> {
    /// Fit every sample separately first.
    Fresh,
    /// Per-sample best raw vectors, aligned with the samples.
    SampleRaws(&'a [Vec<f64>]),
    /// Existing weights (warm start).
    Weights(&'a [Vec<f64>]),
}

/// Ridge regression of per-sample raw vectors on the basis.
pub fn ridge_weights(basis: &BasisSet, x0s: &[f64], raws: &[Vec<f64>], ridge: f64) -> Result<Vec<Vec<f64>>> {
    let k = basis.len();
    let p = raws.first().map_or(0, Vec::len);
    let n = x0s.len();
    if n == 0 || raws.len() != n {
        return Err(Error::InvalidInput("ridge fit needs one raw vector per sample".into()));
    }
    let b = DMatrix::from_fn(n, k, |i, j| basis.eval(x0s[i])[j]);
    let r = DMatrix::from_fn(n, p, |i, j| raws[i][j]);
    let mut a = b.transpose() * &b;
    let scale = a.trace() / k as f64;
    for i in 0..k {
        a[(i, i)] += ridge.max(1e-12) * scale.max(1e-12);
    }
    let rhs = b.transpose() * r;
    let w = a
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or_else(|| Error::Numeric("ridge system not positive definite".into()))?;
    Ok((0..k).map(|i| (0..p).map(|j| w[(i, j)]).collect()).collect())
}

/// x₀-stratified validation split: one random member of every block of five
/// consecutive samples (by x₀) is held out.
pub fn stratified_split(x0s: &[f64], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..x0s.len()).collect();
    order.sort_by(|&a, &b| x0s[a].total_cmp(&x0s[b]).then(a.cmp(&b)));
    if x0s.len() < 5 {
        return (order, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for block in order.chunks(5) {
        let pick = if block.len() == 5 { Some(rng.random_range(0..5)) } else { None };
        for (j, &i) in block.iter().enumerate() {
            if Some(j) == pick {
                val.push(i);
            } else {
                train.push(i);
            }
        }
    }
    (train, val)
}

/// Trains the sub-map of `c` on `samples`, with early stopping on a held-out
/// fifth of them.
pub fn fit_property_submap(
    samples: &[Sample],
    c: &Composition,
    ranges: &Ranges,
    constraints: &Constraints,
    cfg: &TrainConfig,
    init: SubMapInit<'_>,
) -> Result<PropertySubMap> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "sub-map for {c} needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    constraints.check_for(c, ranges)?;
    let p = raw_arity(c);
    if p > MAX_DUAL {
        return Err(Error::InvalidInput(format!("{c} has too many raw properties ({p})")));
    }
    let x0s: Vec<f64> = samples.iter().map(|s| s.x0).collect();
    let lo = x0s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x0s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let basis = BasisSet::new(lo, hi)?;
    let weights = match init {
        SubMapInit::Weights(w) => w.to_vec(),
        SubMapInit::SampleRaws(raws) => ridge_weights(&basis, &x0s, raws, cfg.ridge)?,
        SubMapInit::Fresh => {
            let fits: Vec<Vec<f64>> = samples
                .par_iter()
                .map(|s| fit_sample(s, c, ranges, constraints, &SampleFitConfig::default()).map(|f| f.raw))
                .collect::<Result<_>>()?;
            ridge_weights(&basis, &x0s, &fits, cfg.ridge)?
        }
    };
    let mut map = PropertySubMap {
        composition: c.clone(),
        basis,
        weights,
        constraints: constraints.clone(),
        overrides: Constraints::default(),
        ranges: *ranges,
    };
    map.check_shape()?;

    let (train_idx, val_idx) = stratified_split(&x0s, cfg.seed);
    let train = TrainingProblem::new(
        c,
        &map.basis,
        *ranges,
        constraints,
        train_idx.iter().map(|&i| &samples[i]).collect(),
        cfg,
    );
    let val = if val_idx.is_empty() {
        None
    } else {
        Some(TrainingProblem::new(
            c,
            &map.basis,
            *ranges,
            constraints,
            val_idx.iter().map(|&i| &samples[i]).collect(),
            cfg,
        ))
    };
    let w0: Vec<f64> = map.weights.iter().flatten().copied().collect();
    let score = |w: &[f64]| val.as_ref().map_or_else(|| train.loss(w), |v| v.loss(w));
    let mut best_w = w0.clone();
    let mut best = score(&w0);
    if cfg.max_iter == 0 {
        return Ok(map);
    }
    let bound = vec![f64::INFINITY; w0.len()];
    let neg: Vec<f64> = bound.iter().map(|v| -v).collect();
    let mut f = |w: &[f64], g: &mut [f64]| train.loss_grad(w, g);
    let lcfg = LbfgsConfig {
        max_iter: cfg.max_iter,
        step: cfg.learning_rate,
        grad_tol: 1e-12,
        f_tol: 1e-12,
        ..Default::default()
    };
    let mut opt = Lbfgs::new(&mut f, &w0, &neg, &bound, lcfg);
    if !opt.f().is_finite() {
        return Err(Error::Numeric(format!("training loss of {c} is not finite at the start")));
    }
    let mut since = 0;
    let mut guard = 0;
    while opt.iters() < cfg.max_iter && guard < 4 * cfg.max_iter {
        guard += 1;
        let before = opt.iters();
        let st = opt.step(&mut f);
        if opt.iters() > before {
            let v = score(opt.x());
            if v < best * (1.0 - 1e-9) {
                best = v;
                best_w = opt.x().to_vec();
                since = 0;
            } else {
                since += 1;
            }
        }
        if st != StepStatus::Progress || since >= cfg.patience {
            break;
        }
    }
    if !best.is_finite() {
        return Err(Error::Numeric(format!("training of {c} diverged")));
    }
    log::debug!(
        "sub-map {c}: {} iterations, train loss {:.3e} -> {:.3e}, validation {best:.3e}",
        opt.iters(),
        train.loss(&w0),
        opt.f()
    );
    map.weights = best_w.chunks(p).map(<[f64]>::to_vec).collect();
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{enumerate_compositions, validate_semantics, LibraryFilter};
    use proptest::prelude::*;
    use rand::Rng;

    fn unit() -> Ranges {
        Ranges::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn softmax_symmetry_and_softplus_at_zero() {
        let c: Composition = "++b,+-b,--u".parse().unwrap();
        let mut cons = Constraints::default();
        cons.set(PropertyName::TEnd, Constraint::Pinned { value: 1.0 }).unwrap();
        let raw = vec![0.0; raw_arity(&c)];
        let p = raw_to_properties(&raw, &c, &unit(), &cons).unwrap();
        assert!((p.t[1] - 0.5).abs() < 1e-12);
        assert_eq!(p.t[2], 1.0);
        assert!(((p.x[1] - p.x[0]) - 2f64.ln()).abs() < 1e-5);
        // derivative raw 0 sits at the middle of the admissible range
        let kappa = (p.x[1] - p.x[0]) / (p.t[1] - p.t[0]);
        assert!((p.d1_start - 0.5 * kappa).abs() < 1e-9);
    }

    #[test]
    fn arity_and_names() {
        let c: Composition = "+-b,--b,-+h".parse().unwrap();
        assert_eq!(raw_arity(&c), 9);
        assert_eq!(raw_names(&c).len(), 9);
        let lone: Composition = "++u".parse().unwrap();
        assert_eq!(raw_names(&lone), ["x_start", "d1_end", "d2_end", "gamma"]);
        assert_eq!(raw_arity(&"+-h".parse().unwrap()), 4);
    }

    #[test]
    fn pinned_h_is_exact() {
        let c: Composition = "+-b,--b,-+h".parse().unwrap();
        let mut cons = Constraints::default();
        cons.set(PropertyName::H, Constraint::Pinned { value: 0.0 }).unwrap();
        for k in 0..20 {
            let raw: Vec<f64> = (0..9).map(|i| ((i * 7 + k * 3) % 11) as f64 - 5.0).collect();
            let p = raw_to_properties(&raw, &c, &unit(), &cons).unwrap();
            assert_eq!(p.tail, TailProps::Asymptote { h: 0.0, t_half: match p.tail {
                TailProps::Asymptote { t_half, .. } => t_half,
                _ => unreachable!(),
            } });
            assert!(validate_semantics(&c, &p).unwrap().is_ok());
        }
        cons.set(PropertyName::XStart, Constraint::Pinned { value: 0.0 }).unwrap();
        assert!(cons.check_for(&c, &unit()).is_err());
    }

    #[test]
    fn round_trip_through_raw() {
        let c: Composition = "-+b,++b,+-h".parse().unwrap();
        let cons = Constraints::default();
        let raw = vec![0.3, -0.2, 0.5, -0.5, 0.1, 0.7, -1.0, 0.4, -0.3];
        let p = raw_to_properties(&raw, &c, &unit(), &cons).unwrap();
        let back = properties_to_raw(&p, &c, &unit(), &cons).unwrap();
        let again = raw_to_properties(&back, &c, &unit(), &cons).unwrap();
        let (a, b) = (serde_json::to_value(&p).unwrap(), serde_json::to_value(&again).unwrap());
        for key in ["t_coords", "x_coords", "d1_start", "d1_end", "h", "t_half"] {
            let flat = |v: &serde_json::Value| -> Vec<f64> {
                match &v[key] {
                    serde_json::Value::Array(xs) => xs.iter().map(|x| x.as_f64().unwrap()).collect(),
                    x => vec![x.as_f64().unwrap()],
                }
            };
            for (u, w) in flat(&a).iter().zip(flat(&b)) {
                assert!((u - w).abs() < 1e-9, "{key}: {u} vs {w}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn every_raw_vector_is_valid(idx in 0usize..26, seed in proptest::collection::vec(-40.0f64..40.0, 16)) {
            let lib = enumerate_compositions(3, &LibraryFilter::default());
            let c = &lib[idx];
            let raw = &seed[..raw_arity(c)];
            let p = raw_to_properties(raw, c, &unit(), &Constraints::default()).unwrap();
            let rep = validate_semantics(c, &p).unwrap();
            prop_assert!(rep.is_ok(), "{c} {p:?} {rep:?}");
        }
    }

    fn synth(c: &Composition, raw_of: impl Fn(f64) -> Vec<f64>, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let x0 = i as f64 / (n - 1) as f64;
                let r = realize(&raw_of(x0), c, &unit(), &Constraints::default()).unwrap();
                let times: Vec<f64> = (0..20).map(|k| k as f64 / 19.0).collect();
                let values = times.iter().map(|&t| r.eval(t)).collect();
                Sample::new(i, x0, times, values).unwrap()
            })
            .collect()
    }

    #[test]
    fn sample_fit_recovers_noiseless_trajectory() {
        let c: Composition = "++b,+-h".parse().unwrap();
        let s = &synth(&c, |x0| vec![x0, 0.2, 0.1, 0.3, -0.5, 0.2], 2)[1];
        let fit = fit_sample(s, &c, &unit(), &Constraints::default(), &SampleFitConfig::default()).unwrap();
        assert!(fit.loss < 1e-6, "{}", fit.loss);
        let wrong: Composition = "--b,-+h".parse().unwrap();
        let bad = fit_sample(s, &wrong, &unit(), &Constraints::default(), &SampleFitConfig::default()).unwrap();
        assert!(bad.loss > 100.0 * fit.loss.max(1e-9));
        let short = Sample::new(9, 0.0, vec![0.0], vec![1.0]).unwrap();
        assert!(fit_sample(&short, &c, &unit(), &Constraints::default(), &SampleFitConfig::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c: Composition = "+-b,--b,-+h".parse().unwrap();
        let samples = synth(&c, |x0| vec![x0, 0.5, -0.2, 0.3, 0.4, 0.1, 0.2, 0.5, -0.4], 8);
        let basis = BasisSet::new(0.0, 1.0).unwrap();
        let cons = Constraints::default();
        let cfg = TrainConfig::default();
        let prob = TrainingProblem::new(&c, &basis, unit(), &cons, samples.iter().collect(), &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let w: Vec<f64> = (0..prob.n_weights()).map(|_| rng.random_range(-0.5..0.5)).collect();
            let mut g = vec![0.0; w.len()];
            prob.loss_grad(&w, &mut g);
            let j = rng.random_range(0..w.len());
            let h = 1e-6;
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            let fd = (prob.loss(&wp) - prob.loss(&wm)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {}", g[j]);
        }
    }

    #[test]
    fn zero_budget_keeps_initialization() {
        let c: Composition = "++b,+-h".parse().unwrap();
        let samples = synth(&c, |x0| vec![x0, 0.2, 0.1, 0.3, -0.5, 0.2], 6);
        let w0 = vec![vec![0.1; 6]; 6];
        let cfg = TrainConfig { max_iter: 0, ..Default::default() };
        let m = fit_property_submap(&samples, &c, &unit(), &Constraints::default(), &cfg, SubMapInit::Weights(&w0)).unwrap();
        assert_eq!(m.weights, w0);
    }

    #[test]
    fn training_fits_smooth_map() {
        let c: Composition = "++b,+-h".parse().unwrap();
        let samples = synth(&c, |x0| vec![x0, 0.2 + 0.3 * x0, 0.1 - x0, 0.3, -0.5 + x0 * x0, 0.2], 20);
        let m = fit_property_submap(
            &samples,
            &c,
            &unit(),
            &Constraints::default(),
            &TrainConfig::default(),
            SubMapInit::Fresh,
        )
        .unwrap();
        let mse: f64 = samples
            .iter()
            .map(|s| sample_mse(&m.realize(s.x0).unwrap(), s))
            .sum::<f64>()
            / samples.len() as f64;
        assert!(mse < 1e-4, "{mse}");
    }

    #[test]
    fn split_is_stratified() {
        let x0s: Vec<f64> = (0..23).map(|i| (i * 7 % 23) as f64).collect();
        let (tr, va) = stratified_split(&x0s, 1);
        assert_eq!(tr.len() + va.len(), 23);
        assert_eq!(va.len(), 4);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }
}
