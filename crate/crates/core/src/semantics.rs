//! Motif vocabulary, compositions, property sets and the finite-difference
//! shape extraction oracle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotifKind {
    Bounded,
    Divergent,
    Asymptote,
}

/// One of the ten shape primitives. Variant order is the library order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Motif {
    IncConvexB,
    IncConcaveB,
    DecConvexB,
    DecConcaveB,
    IncConvexU,
    IncConcaveU,
    DecConvexU,
    DecConcaveU,
    IncConcaveH,
    DecConvexH,
}

pub const ALL_MOTIFS: [Motif; 10] = [
    Motif::IncConvexB,
    Motif::IncConcaveB,
    Motif::DecConvexB,
    Motif::DecConcaveB,
    Motif::IncConvexU,
    Motif::IncConcaveU,
    Motif::DecConvexU,
    Motif::DecConcaveU,
    Motif::IncConcaveH,
    Motif::DecConvexH,
];

impl Motif {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn increasing(self) -> bool {
        use Motif::*;
        matches!(
            self,
            IncConvexB | IncConcaveB | IncConvexU | IncConcaveU | IncConcaveH
        )
    }

    pub fn convex(self) -> bool {
        use Motif::*;
        matches!(
            self,
            IncConvexB | DecConvexB | IncConvexU | DecConvexU | DecConvexH
        )
    }

    /// +1 for increasing, -1 for decreasing.
    pub fn mon_sign(self) -> f64 {
        if self.increasing() {
            1.0
        } else {
            -1.0
        }
    }

    /// +1 for convex, -1 for concave.
    pub fn curv_sign(self) -> f64 {
        if self.convex() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn kind(self) -> MotifKind {
        match self.index() {
            0..=3 => MotifKind::Bounded,
            4..=7 => MotifKind::Divergent,
            _ => MotifKind::Asymptote,
        }
    }

    pub fn is_bounded(self) -> bool {
        self.kind() == MotifKind::Bounded
    }

    pub fn from_signs(increasing: bool, convex: bool, kind: MotifKind) -> Option<Motif> {
        ALL_MOTIFS
            .iter()
            .copied()
            .find(|m| m.increasing() == increasing && m.convex() == convex && m.kind() == kind)
    }

    pub fn code(self) -> &'static str {
        use Motif::*;
        match self {
            IncConvexB => "++b",
            IncConcaveB => "+-b",
            DecConvexB => "-+b",
            DecConcaveB => "--b",
            IncConvexU => "++u",
            IncConcaveU => "+-u",
            DecConvexU => "-+u",
            DecConcaveU => "--u",
            IncConcaveH => "+-h",
            DecConvexH => "-+h",
        }
    }

    /// Motifs that may directly follow `self`.
    pub fn successors(self) -> Vec<Motif> {
        ALL_MOTIFS
            .iter()
            .copied()
            .filter(|&b| transition_between(self, b).is_some())
            .collect()
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Motif {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ALL_MOTIFS
            .iter()
            .copied()
            .find(|m| m.code() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown motif '{s}'")))
    }
}

impl Serialize for Motif {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Motif {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Nature of a transition point between two motifs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Maximum,
    Minimum,
    Inflection,
}

impl Transition {
    pub fn is_extremum(self) -> bool {
        !matches!(self, Transition::Inflection)
    }
}

/// Transition nature between consecutive motifs, `None` if `b` may not follow `a`.
pub fn transition_between(a: Motif, b: Motif) -> Option<Transition> {
    if !a.is_bounded() {
        return None;
    }
    let mon_flip = a.increasing() != b.increasing();
    let curv_flip = a.convex() != b.convex();
    match (mon_flip, curv_flip) {
        (true, false) => {
            if a.increasing() && !a.convex() {
                Some(Transition::Maximum)
            } else if !a.increasing() && a.convex() {
                Some(Transition::Minimum)
            } else {
                None
            }
        }
        (false, true) => Some(Transition::Inflection),
        _ => None,
    }
}

/// A valid motif sequence: bounded motifs followed by exactly one unbounded motif.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Composition(Vec<Motif>);

impl Composition {
    pub fn new(motifs: Vec<Motif>) -> Result<Self> {
        let Some(&last) = motifs.last() else {
            return Err(Error::Structural("composition is empty".into()));
        };
        if last.is_bounded() {
            return Err(Error::Structural(format!(
                "last motif {last} must be unbounded"
            )));
        }
        for (i, m) in motifs[..motifs.len() - 1].iter().enumerate() {
            if !m.is_bounded() {
                return Err(Error::Structural(format!(
                    "motif {i} ({m}) is unbounded but not last"
                )));
            }
        }
        for w in motifs.windows(2) {
            if transition_between(w[0], w[1]).is_none() {
                return Err(Error::Structural(format!(
                    "{} cannot be followed by {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Composition(motifs))
    }

    pub fn motifs(&self) -> &[Motif] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bounded(&self) -> &[Motif] {
        &self.0[..self.0.len() - 1]
    }

    pub fn n_bounded(&self) -> usize {
        self.0.len() - 1
    }

    pub fn last(&self) -> Motif {
        *self.0.last().expect("composition is non-empty")
    }

    pub fn first(&self) -> Motif {
        self.0[0]
    }

    /// Nature of the transition points t_1..t_{n-1}; entry `i` sits after motif `i`.
    pub fn transitions(&self) -> Vec<Transition> {
        self.0
            .windows(2)
            .map(|w| transition_between(w[0], w[1]).expect("validated on construction"))
            .collect()
    }

    /// Nature of t_end, `None` when there is no bounded motif.
    pub fn end_transition(&self) -> Option<Transition> {
        self.transitions().last().copied()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|m| m.index()).collect()
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<&str> = self.0.iter().map(|m| m.code()).collect();
        f.write_str(&codes.join(","))
    }
}

impl FromStr for Composition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let motifs = s
            .trim()
            .trim_matches(|c| c == '(' || c == ')')
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Motif>>>()?;
        Composition::new(motifs)
    }
}

impl Serialize for Composition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Composition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LibraryFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first: Option<Motif>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<Motif>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forbidden: Vec<Motif>,
}

impl LibraryFilter {
    pub fn accepts(&self, c: &Composition) -> bool {
        self.first.is_none_or(|m| c.first() == m)
            && self.last.is_none_or(|m| c.last() == m)
            && !c.motifs().iter().any(|m| self.forbidden.contains(m))
    }
}

/// All compositions with at most `max_motifs` motifs passing `filter`, in
/// lexicographic order of motif indices.
pub fn enumerate_compositions(max_motifs: usize, filter: &LibraryFilter) -> Vec<Composition> {
    let mut out = Vec::new();
    let mut stack: Vec<Vec<Motif>> = ALL_MOTIFS.iter().map(|&m| vec![m]).collect();
    while let Some(seq) = stack.pop() {
        let last = *seq.last().unwrap();
        if !last.is_bounded() {
            let c = Composition(seq);
            if filter.accepts(&c) {
                out.push(c);
            }
            continue;
        }
        if seq.len() >= max_motifs {
            continue;
        }
        for next in last.successors() {
            let mut s = seq.clone();
            s.push(next);
            stack.push(s);
        }
    }
    out.sort_by_key(|c| c.indices());
    if out.is_empty() {
        log::warn!("composition library is empty after filtering (max_motifs={max_motifs})");
    }
    out
}

/// Tail-specific properties of the unbounded motif.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailProps {
    /// Asymptotic doubling time or incrementing factor of a divergent motif.
    Gamma(f64),
    Asymptote { h: f64, t_half: f64 },
}

/// Quantitative half of a semantic representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FlatProps", try_from = "FlatProps")]
pub struct PropertySet {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub d1_start: f64,
    pub d1_end: f64,
    pub d2_end: f64,
    pub tail: TailProps,
}

#[derive(Serialize, Deserialize)]
struct FlatProps {
    t_coords: Vec<f64>,
    x_coords: Vec<f64>,
    d1_start: f64,
    d1_end: f64,
    d2_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_half: Option<f64>,
}

impl From<PropertySet> for FlatProps {
    fn from(p: PropertySet) -> Self {
        let (gamma, h, t_half) = match p.tail {
            TailProps::Gamma(g) => (Some(g), None, None),
            TailProps::Asymptote { h, t_half } => (None, Some(h), Some(t_half)),
        };
        FlatProps {
            t_coords: p.t,
            x_coords: p.x,
            d1_start: p.d1_start,
            d1_end: p.d1_end,
            d2_end: p.d2_end,
            gamma,
            h,
            t_half,
        }
    }
}

impl TryFrom<FlatProps> for PropertySet {
    type Error = String;
    fn try_from(f: FlatProps) -> std::result::Result<Self, String> {
        let tail = match (f.gamma, f.h, f.t_half) {
            (Some(g), None, None) => TailProps::Gamma(g),
            (None, Some(h), Some(t_half)) => TailProps::Asymptote { h, t_half },
            _ => {
                return Err(
                    "tail properties must be either `gamma` or both `h` and `t_half`".into(),
                )
            }
        };
        Ok(PropertySet {
            t: f.t_coords,
            x: f.x_coords,
            d1_start: f.d1_start,
            d1_end: f.d1_end,
            d2_end: f.d2_end,
            tail,
        })
    }
}

impl PropertySet {
    pub fn t_start(&self) -> f64 {
        self.t[0]
    }
    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }
    pub fn x_start(&self) -> f64 {
        self.x[0]
    }
    pub fn x_end(&self) -> f64 {
        *self.x.last().unwrap()
    }
}

/// Composition together with consistent properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRep {
    pub composition: Composition,
    pub properties: PropertySet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    TimeOrdering,
    Monotonicity,
    EndDerivative,
    TailDomain,
    StartDerivativeRange,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: Rule, message: String) {
        self.violations.push(Violation { rule, message });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.into_iter().map(|v| v.message).collect();
            Err(Error::Precondition(msgs.join("; ")))
        }
    }
}

/// Smallest admissible `t_half - t_end` for an asymptote tail. Shorter
/// half-lives force the tail to bend the wrong way right after `t_end`.
pub fn min_half_life(x_end: f64, h: f64, d1_end: f64) -> f64 {
    3f64.ln() * (x_end - h).abs() / (2.0 * d1_end.abs())
}

const ZERO_TOL: f64 = 1e-9;

/// Checks every property-set invariant for `c`. Structural mismatches and
/// non-finite values are errors; rule violations are collected in the report.
pub fn validate_semantics(c: &Composition, p: &PropertySet) -> Result<ValidationReport> {
    let n = c.n_bounded() + 1;
    if p.t.len() != n || p.x.len() != n {
        return Err(Error::Structural(format!(
            "composition {c} needs {n} transition points, got t:{} x:{}",
            p.t.len(),
            p.x.len()
        )));
    }
    let last = c.last();
    match (last.kind(), p.tail) {
        (MotifKind::Divergent, TailProps::Gamma(_))
        | (MotifKind::Asymptote, TailProps::Asymptote { .. }) => {}
        _ => {
            return Err(Error::Structural(format!(
                "tail properties do not match motif {last}"
            )))
        }
    }
    let mut scalars = vec![p.d1_start, p.d1_end, p.d2_end];
    scalars.extend(&p.t);
    scalars.extend(&p.x);
    match p.tail {
        TailProps::Gamma(g) => scalars.push(g),
        TailProps::Asymptote { h, t_half } => scalars.extend([h, t_half]),
    }
    if scalars.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("property set contains non-finite values".into()));
    }

    let mut rep = ValidationReport::default();
    for i in 0..n - 1 {
        if p.t[i + 1] <= p.t[i] {
            rep.push(
                Rule::TimeOrdering,
                format!("t[{}]={} is not after t[{}]={}", i + 1, p.t[i + 1], i, p.t[i]),
            );
        }
    }
    for (i, m) in c.bounded().iter().enumerate() {
        let dx = p.x[i + 1] - p.x[i];
        if dx * m.mon_sign() <= 0.0 {
            rep.push(
                Rule::Monotonicity,
                format!("x[{}] - x[{}] = {dx} contradicts motif {m}", i + 1, i),
            );
        }
    }
    match c.end_transition() {
        Some(tr) if tr.is_extremum() && p.d1_end.abs() > ZERO_TOL => rep.push(
            Rule::EndDerivative,
            format!("t_end is an extremum but d1_end = {}", p.d1_end),
        ),
        Some(Transition::Inflection) if p.d2_end.abs() > ZERO_TOL => rep.push(
            Rule::EndDerivative,
            format!("t_end is an inflection but d2_end = {}", p.d2_end),
        ),
        _ => {}
    }
    check_tail_domain(last, p, &mut rep);

    if c.n_bounded() >= 1 && !rep.has(Rule::TimeOrdering) {
        let kappa = (p.x[1] - p.x[0]) / (p.t[1] - p.t[0]);
        let nature = c.transitions()[0];
        match crate::traj_c0::derivative_range(c.first(), nature, kappa) {
            Ok((lo, hi)) => {
                if !(p.d1_start > lo && p.d1_start < hi) {
                    rep.push(
                        Rule::StartDerivativeRange,
                        format!("d1_start = {} outside ({lo}, {hi})", p.d1_start),
                    );
                }
            }
            Err(e) => rep.push(Rule::StartDerivativeRange, e.to_string()),
        }
    }
    Ok(rep)
}

fn check_tail_domain(last: Motif, p: &PropertySet, rep: &mut ValidationReport) {
    let (d1, d2) = (p.d1_end, p.d2_end);
    let s = last.mon_sign();
    let mut bad = |msg: String| rep.push(Rule::TailDomain, msg);
    match p.tail {
        TailProps::Gamma(g) => {
            if g <= 0.0 {
                bad(format!("gamma = {g} must be positive"));
            }
            if last.convex() == last.increasing() {
                // ++u / --u
                if s * d1 < 0.0 || s * d2 < 0.0 {
                    bad(format!("{last} needs d1_end, d2_end with its signs (got {d1}, {d2})"));
                }
            } else {
                if s * d1 <= 0.0 {
                    bad(format!("{last} needs d1_end strictly signed (got {d1})"));
                }
                if d2.abs() > ZERO_TOL {
                    bad(format!("{last} needs d2_end = 0 (got {d2})"));
                }
            }
        }
        TailProps::Asymptote { h, t_half } => {
            let x_end = p.x_end();
            let t_end = p.t_end();
            if s * (h - x_end) <= 0.0 {
                bad(format!("asymptote h = {h} on the wrong side of x_end = {x_end}"));
            }
            if t_half <= t_end {
                bad(format!("t_half = {t_half} must exceed t_end = {t_end}"));
            }
            if s * d1 <= 0.0 {
                bad(format!("{last} needs d1_end strictly signed (got {d1})"));
            }
            if d2.abs() > ZERO_TOL {
                bad(format!("{last} needs d2_end = 0 (got {d2})"));
            }
            if s * (h - x_end) > 0.0 && s * d1 > 0.0 {
                let lo = min_half_life(x_end, h, d1);
                if t_half - t_end < lo * (1.0 - 1e-9) {
                    bad(format!(
                        "t_half - t_end = {} below the convexity bound {lo}",
                        t_half - t_end
                    ));
                }
            }
        }
    }
}

/// A maximal stretch of samples with constant derivative signs.
/// `curvature` is 0 for straight-line stretches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeRun {
    pub increasing: bool,
    pub curvature: i8,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub motifs: Vec<Motif>,
    /// Interior transition times.
    pub transitions: Vec<f64>,
}

const MIN_RUN: usize = 3;

/// Splits dense samples into runs of constant first/second finite-difference
/// sign. Runs shorter than a few samples (kinks, sign flicker at transitions)
/// are absorbed by their neighbours.
pub fn shape_runs(t: &[f64], x: &[f64], curvature_tol: Option<f64>) -> Result<Vec<ShapeRun>> {
    let n = t.len();
    if n != x.len() {
        return Err(Error::Structural("t and x lengths differ".into()));
    }
    if n < 2 * MIN_RUN + 3 {
        return Err(Error::InvalidInput(format!("need more samples (got {n})")));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("samples must be finite with increasing t".into()));
    }
    let span = t[n - 1] - t[0];
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    let k_tol = curvature_tol.unwrap_or(1e-6 * range / (span * span));
    let m_tol = 1e-12 * range / span;

    let mut d1 = Vec::with_capacity(n - 2);
    let mut d2 = Vec::with_capacity(n - 2);
    let mut tm = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let h1 = t[i] - t[i - 1];
        let h2 = t[i + 1] - t[i];
        let s1 = (x[i] - x[i - 1]) / h1;
        let s2 = (x[i + 1] - x[i]) / h2;
        d1.push((x[i + 1] - x[i - 1]) / (h1 + h2));
        d2.push(2.0 * (s2 - s1) / (h1 + h2));
        tm.push(t[i]);
    }
    let sgn = |v: f64, tol: f64| -> i8 {
        if v > tol {
            1
        } else if v < -tol {
            -1
        } else {
            0
        }
    };

    // (mon, curv, first index, last index)
    let mut runs: Vec<(i8, i8, usize, usize)> = Vec::new();
    for i in 0..d1.len() {
        let lab = (sgn(d1[i], m_tol), sgn(d2[i], k_tol));
        match runs.last_mut() {
            Some(r) if (r.0, r.1) == lab => r.3 = i,
            _ => runs.push((lab.0, lab.1, i, i)),
        }
    }
    loop {
        let short = runs
            .iter()
            .position(|r| r.0 == 0 || r.3 - r.2 + 1 < MIN_RUN)
            .filter(|_| runs.len() > 1);
        let Some(i) = short else { break };
        let r = runs.remove(i);
        if i == 0 {
            runs[0].2 = r.2;
        } else {
            runs[i - 1].3 = r.3;
        }
        let mut merged: Vec<(i8, i8, usize, usize)> = Vec::with_capacity(runs.len());
        for r in runs {
            match merged.last_mut() {
                Some(p) if (p.0, p.1) == (r.0, r.1) => p.3 = r.3,
                _ => merged.push(r),
            }
        }
        runs = merged;
    }
    if runs.len() == 1 && runs[0].0 == 0 {
        return Err(Error::Ambiguity("trajectory is flat".into()));
    }

    let mut out = Vec::with_capacity(runs.len());
    let mut start = t[0];
    for w in 0..runs.len() {
        let r = runs[w];
        let end = if w + 1 == runs.len() {
            t[n - 1]
        } else {
            let nx = runs[w + 1];
            let (a, b) = (r.3, nx.2);
            let d = if r.0 != nx.0 { &d1 } else { &d2 };
            if d[a] * d[b] < 0.0 {
                tm[a] + (tm[b] - tm[a]) * d[a].abs() / (d[a].abs() + d[b].abs())
            } else {
                0.5 * (tm[a] + tm[b])
            }
        };
        out.push(ShapeRun {
            increasing: r.0 > 0,
            curvature: r.1,
            start,
            end,
        });
        start = end;
    }
    Ok(out)
}

/// Recovers the bounded composition prefix and interior transition points
/// from dense samples.
pub fn extract_semantics(t: &[f64], x: &[f64], curvature_tol: Option<f64>) -> Result<Extraction> {
    let runs = shape_runs(t, x, curvature_tol)?;
    if let Some(r) = runs.iter().find(|r| r.curvature == 0) {
        return Err(Error::Ambiguity(format!(
            "zero curvature on [{}, {}]",
            r.start, r.end
        )));
    }
    let motifs: Vec<Motif> = runs
        .iter()
        .map(|r| Motif::from_signs(r.increasing, r.curvature > 0, MotifKind::Bounded).unwrap())
        .collect();
    for w in motifs.windows(2) {
        if transition_between(w[0], w[1]).is_none() {
            return Err(Error::Ambiguity(format!(
                "both derivative signs change between {} and {}",
                w[0], w[1]
            )));
        }
    }
    let transitions = runs[..runs.len() - 1].iter().map(|r| r.end).collect();
    Ok(Extraction {
        motifs,
        transitions,
    })
}

/// Shape agreement of `runs` with `expected`, where a straight stretch is
/// accepted in place of a motif whose both ends are inflections.
pub fn conforms_relaxed(expected: &[Motif], runs: &[ShapeRun]) -> bool {
    if expected.len() != runs.len() {
        return false;
    }
    expected.iter().zip(runs).enumerate().all(|(i, (m, r))| {
        if m.increasing() != r.increasing {
            return false;
        }
        match r.curvature {
            0 => {
                let inflection = |a: Motif, b: Motif| {
                    transition_between(a, b) == Some(Transition::Inflection)
                };
                i > 0
                    && i + 1 < expected.len()
                    && inflection(expected[i - 1], *m)
                    && inflection(*m, expected[i + 1])
            }
            k => (k > 0) == m.convex(),
        }
    })
}

/// Bounded motif with the same derivative signs as `m`.
pub fn as_bounded(m: Motif) -> Motif {
    Motif::from_signs(m.increasing(), m.convex(), MotifKind::Bounded).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn comp(s: &str) -> Composition {
        s.parse().unwrap()
    }

    #[test]
    fn successors_of_inc_convex() {
        let s = Motif::IncConvexB.successors();
        assert_eq!(s, vec![Motif::IncConcaveB, Motif::IncConcaveU, Motif::IncConcaveH]);
    }

    #[test]
    fn library_sizes() {
        let f = LibraryFilter::default();
        let one = enumerate_compositions(1, &f);
        assert_eq!(one.len(), 6);
        assert!(one.iter().all(|c| c.len() == 1));
        let three = enumerate_compositions(3, &f);
        let count = |k| three.iter().filter(|c| c.len() == k).count();
        assert_eq!((count(1), count(2), count(3)), (6, 8, 12));
        assert_eq!(three.len(), 26);
        let mut sorted = three.clone();
        sorted.sort_by_key(|c| c.indices());
        assert_eq!(sorted, three);
    }

    #[test]
    fn filters() {
        let f = LibraryFilter {
            last: Some(Motif::DecConvexH),
            ..Default::default()
        };
        let lib = enumerate_compositions(4, &f);
        assert!(lib.iter().all(|c| c.last() == Motif::DecConvexH));
        assert_eq!(lib.len(), 6);
        let none = LibraryFilter {
            first: Some(Motif::IncConvexU),
            last: Some(Motif::DecConvexH),
            ..Default::default()
        };
        assert!(enumerate_compositions(3, &none).is_empty());
    }

    #[test]
    fn composition_round_trip() {
        let c = comp("++b,+-b,++u");
        assert_eq!(c.to_string(), "++b,+-b,++u");
        assert_eq!(
            c.transitions(),
            vec![Transition::Inflection, Transition::Inflection]
        );
        let js = serde_json::to_string(&c).unwrap();
        assert_eq!(js, "\"++b,+-b,++u\"");
        assert!("+-b,-+h".parse::<Composition>().is_err());
        assert!("++b".parse::<Composition>().is_err());
        assert!("++u,+-b".parse::<Composition>().is_err());
        assert!("++b,++u".parse::<Composition>().is_err());
    }

    fn valid_example() -> (Composition, PropertySet) {
        // kappa = 5 and t_1 an inflection: allowed d1_start in (0, 5)
        (
            comp("++b,+-h"),
            PropertySet {
                t: vec![0.0, 0.2],
                x: vec![0.0, 1.0],
                d1_start: 2.5,
                d1_end: 6.25,
                d2_end: 0.0,
                tail: TailProps::Asymptote { h: 2.0, t_half: 0.5 },
            },
        )
    }

    #[test]
    fn validate_accepts_consistent_set() {
        let (c, p) = valid_example();
        let rep = validate_semantics(&c, &p).unwrap();
        assert!(rep.is_ok(), "{rep:?}");
    }

    #[test]
    fn validate_flags_ordering_and_tail() {
        let (c, mut p) = valid_example();
        p.t = vec![1.0, 0.5];
        assert!(validate_semantics(&c, &p).unwrap().has(Rule::TimeOrdering));

        let c = comp("--b,-+h");
        let p = PropertySet {
            t: vec![0.0, 0.2],
            x: vec![2.0, 1.0],
            d1_start: -2.5,
            d1_end: -6.25,
            d2_end: 0.0,
            tail: TailProps::Asymptote { h: 1.5, t_half: 0.5 },
        };
        assert!(validate_semantics(&c, &p).unwrap().has(Rule::TailDomain));
    }

    #[test]
    fn validate_errors() {
        let (c, mut p) = valid_example();
        p.x.push(3.0);
        assert!(matches!(validate_semantics(&c, &p), Err(Error::Structural(_))));
        let (c, mut p) = valid_example();
        p.d1_start = f64::NAN;
        assert!(matches!(validate_semantics(&c, &p), Err(Error::Numeric(_))));
        let (c, mut p) = valid_example();
        p.tail = TailProps::Gamma(1.0);
        assert!(matches!(validate_semantics(&c, &p), Err(Error::Structural(_))));
    }

    #[test]
    fn property_set_json_is_flat() {
        let (_, p) = valid_example();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["h"], 2.0);
        assert_eq!(v["t_coords"][1], 0.2);
        assert!(v.get("gamma").is_none());
        let back: PropertySet = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn extract_sine() {
        let t = grid(0.0, 2.0 * PI, 4001);
        let x: Vec<f64> = t.iter().map(|v| v.sin()).collect();
        let e = extract_semantics(&t, &x, None).unwrap();
        use Motif::*;
        assert_eq!(e.motifs, vec![IncConcaveB, DecConcaveB, DecConvexB, IncConvexB]);
        let step = t[1] - t[0];
        for (got, want) in e.transitions.iter().zip([PI / 2.0, PI, 1.5 * PI]) {
            assert!((got - want).abs() < 2.0 * step, "{got} vs {want}");
        }
    }

    #[test]
    fn extract_exponential_and_line() {
        let t = grid(0.0, 1.0, 2001);
        let x: Vec<f64> = t.iter().map(|v| (-v).exp()).collect();
        let e = extract_semantics(&t, &x, None).unwrap();
        assert_eq!(e.motifs, vec![Motif::DecConvexB]);
        assert!(e.transitions.is_empty());
        let line = t.clone();
        assert!(matches!(
            extract_semantics(&t, &line, None),
            Err(Error::Ambiguity(_))
        ));
    }
}
