//! Composition map: per-sample losses of every library composition, then the
//! best partition of the x₀ axis into at most `I` branches.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::prop_map::{fit_sample, Constraints, Ranges, SampleFitConfig};
use crate::semantics::Composition;

/// Branches over x₀; `boundaries[i]` separates branch `i` from `i + 1` and
/// belongs to branch `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMap {
    boundaries: Vec<f64>,
    compositions: Vec<Composition>,
}

#[derive(Serialize, Deserialize)]
struct Branch {
    upper_bound: Option<f64>,
    composition: Composition,
}

impl Serialize for CompositionMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let branches: Vec<Branch> = self
            .compositions
            .iter()
            .enumerate()
            .map(|(i, c)| Branch {
                upper_bound: self.boundaries.get(i).copied(),
                composition: c.clone(),
            })
            .collect();
        branches.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CompositionMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let branches = Vec::<Branch>::deserialize(d)?;
        let n = branches.len();
        if n == 0 {
            return Err(serde::de::Error::custom("composition_map: needs at least one branch"));
        }
        let mut boundaries = Vec::new();
        for (i, b) in branches.iter().enumerate() {
            match (b.upper_bound, i + 1 == n) {
                (Some(u), false) => boundaries.push(u),
                (None, true) => {}
                _ => {
                    return Err(serde::de::Error::custom(format!(
                        "composition_map[{i}].upper_bound: every branch but the last needs one, the last has none"
                    )))
                }
            }
        }
        CompositionMap::new(boundaries, branches.into_iter().map(|b| b.composition).collect())
            .map_err(|e| serde::de::Error::custom(format!("composition_map: {e}")))
    }
}

impl CompositionMap {
    pub fn new(boundaries: Vec<f64>, compositions: Vec<Composition>) -> Result<Self> {
        if compositions.is_empty() || boundaries.len() + 1 != compositions.len() {
            return Err(Error::InvalidInput(format!(
                "{} compositions need {} boundaries, got {}",
                compositions.len(),
                compositions.len().saturating_sub(1),
                boundaries.len()
            )));
        }
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("boundaries must be finite and strictly increasing".into()));
        }
        if compositions.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("adjacent branches must differ".into()));
        }
        Ok(CompositionMap {
            boundaries,
            compositions,
        })
    }

    pub fn single(c: Composition) -> Self {
        CompositionMap {
            boundaries: Vec::new(),
            compositions: vec![c],
        }
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn compositions(&self) -> &[Composition] {
        &self.compositions
    }

    pub fn n_branches(&self) -> usize {
        self.compositions.len()
    }

    pub fn branch_of(&self, x0: f64) -> usize {
        self.boundaries.partition_point(|&b| b < x0)
    }

    pub fn predict(&self, x0: f64) -> &Composition {
        &self.compositions[self.branch_of(x0)]
    }

    /// Distinct compositions in order of first appearance.
    pub fn distinct(&self) -> Vec<Composition> {
        let mut out: Vec<Composition> = Vec::new();
        for c in &self.compositions {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }
}

/// Losses of every composition on every sample, samples sorted by x₀.
#[derive(Debug, Clone)]
pub struct LossTable {
    pub sample_ids: Vec<usize>,
    pub x0: Vec<f64>,
    pub compositions: Vec<Composition>,
    /// `loss[d][c]`.
    pub loss: Vec<Vec<f64>>,
    /// Best raw vector of each fit, `None` where the sentinel was used.
    pub raws: Vec<Vec<Option<Vec<f64>>>>,
    pub sentinel: f64,
}

fn variance(samples: &[Sample]) -> f64 {
    let n = samples.iter().map(Sample::len).sum::<usize>() as f64;
    let mean = samples.iter().flat_map(|s| &s.values).sum::<f64>() / n;
    samples.iter().flat_map(|s| &s.values).map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Trajectory MSE of the best per-sample fit of `c`, or `sentinel` when `c`
/// has more transitions than the sample can resolve or no finite fit exists.
pub fn score_sample(
    sample: &Sample,
    c: &Composition,
    ranges: &Ranges,
    cfg: &SampleFitConfig,
    sentinel: f64,
) -> Result<(f64, Option<Vec<f64>>)> {
    if sample.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "sample {} needs at least 2 observations",
            sample.id
        )));
    }
    if c.n_bounded() >= sample.len() {
        return Ok((sentinel, None));
    }
    match fit_sample(sample, c, ranges, &Constraints::default(), cfg) {
        Ok(fit) if fit.loss.is_finite() && fit.loss < sentinel => Ok((fit.loss, Some(fit.raw))),
        Ok(_) | Err(Error::Convergence(_)) => Ok((sentinel, None)),
        Err(e) => Err(e),
    }
}

impl LossTable {
    pub fn compute(samples: &[Sample], library: &[Composition], ranges: &Ranges, cfg: &SampleFitConfig) -> Result<Self> {
        if samples.is_empty() || library.is_empty() {
            return Err(Error::InvalidInput("loss table needs samples and compositions".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[a].x0.total_cmp(&samples[b].x0).then(samples[a].id.cmp(&samples[b].id)));
        let sentinel = 1e6 * variance(samples).max(1e-12);
        let cells: Vec<(usize, usize)> = order
            .iter()
            .flat_map(|&d| (0..library.len()).map(move |c| (d, c)))
            .collect();
        let results: Vec<(f64, Option<Vec<f64>>)> = cells
            .par_iter()
            .map(|&(d, c)| score_sample(&samples[d], &library[c], ranges, cfg, sentinel))
            .collect::<Result<_>>()?;
        let k = library.len();
        let mut loss = Vec::with_capacity(order.len());
        let mut raws = Vec::with_capacity(order.len());
        for row in results.chunks(k) {
            loss.push(row.iter().map(|r| r.0).collect());
            raws.push(row.iter().map(|r| r.1.clone()).collect());
        }
        Ok(LossTable {
            sample_ids: order.iter().map(|&d| samples[d].id).collect(),
            x0: order.iter().map(|&d| samples[d].x0).collect(),
            compositions: library.to_vec(),
            loss,
            raws,
            sentinel,
        })
    }

    /// Keeps only the compositions accepted by `keep`.
    pub fn restrict(&self, keep: impl Fn(&Composition) -> bool) -> LossTable {
        let cols: Vec<usize> = (0..self.compositions.len()).filter(|&c| keep(&self.compositions[c])).collect();
        LossTable {
            sample_ids: self.sample_ids.clone(),
            x0: self.x0.clone(),
            compositions: cols.iter().map(|&c| self.compositions[c].clone()).collect(),
            loss: self.loss.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            raws: self.raws.iter().map(|r| cols.iter().map(|&c| r[c].clone()).collect()).collect(),
            sentinel: self.sentinel,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sample_id".to_string(), "x0".to_string()];
        header.extend(self.compositions.iter().map(ToString::to_string));
        out.write_record(&header)?;
        for (d, row) in self.loss.iter().enumerate() {
            let mut rec = vec![self.sample_ids[d].to_string(), self.x0[d].to_string()];
            rec.extend(row.iter().map(ToString::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A run of consecutive samples `[start, end)` assigned to one composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub end: usize,
    pub composition: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub runs: Vec<Run>,
    pub cost: f64,
}

/// Whether samples `[a, b)` may form a branch: at least two samples and at
/// least a tenth of the x₀ range between the midpoint boundaries.
pub fn run_is_valid(x0: &[f64], a: usize, b: usize) -> bool {
    let n = x0.len();
    if b < a + 2 {
        return false;
    }
    let (lo, hi) = (x0[0], x0[n - 1]);
    let left = if a == 0 { lo } else { 0.5 * (x0[a - 1] + x0[a]) };
    let right = if b == n { hi } else { 0.5 * (x0[b - 1] + x0[b]) };
    right - left >= 0.1 * (hi - lo) * (1.0 - 1e-12)
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

#[derive(Clone)]
struct State {
    cost: f64,
    path: Vec<(usize, usize)>,
}

/// Optimal partition of x₀-sorted samples: minimal total loss, then fewest
/// branches, then lexicographically smallest composition sequence.
pub fn optimal_partition(x0: &[f64], loss: &[Vec<f64>], comps: &[Composition], max_branches: usize) -> Result<Partition> {
    let d = x0.len();
    let k = comps.len();
    if d < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {d}")));
    }
    if k == 0 || max_branches == 0 {
        return Err(Error::InvalidInput("need a composition and at least one branch".into()));
    }
    if x0.windows(2).any(|w| w[1] < w[0]) || loss.len() != d {
        return Err(Error::InvalidInput("loss rows must follow x₀ order".into()));
    }
    // cost[a][b][c] for runs [a, b)
    let mut cost = vec![vec![Vec::new(); d + 1]; d];
    for a in 0..d {
        let mut acc = vec![0.0; k];
        for b in a + 1..=d {
            for (c, v) in acc.iter_mut().enumerate() {
                *v += loss[b - 1][c];
            }
            cost[a][b] = acc.clone();
        }
    }
    let better = |x: &State, y: &State| match x.cost.total_cmp(&y.cost) {
        Ordering::Equal => {
            let xs: Vec<usize> = x.path.iter().map(|p| p.1).collect();
            let ys: Vec<usize> = y.path.iter().map(|p| p.1).collect();
            lex(&xs, &ys, comps) == Ordering::Less
        }
        o => o == Ordering::Less,
    };
    // best[j][c] for the current branch count: first j samples, last run composition c
    let mut prev: Vec<Vec<Option<State>>> = vec![vec![None; k]; d + 1];
    let mut overall: Option<(State, usize)> = None;
    let max_feasible = d / 2;
    if max_branches > max_feasible {
        log::warn!("at most {max_feasible} branches fit {d} samples; reducing from {max_branches}");
    }
    for branches in 1..=max_branches.min(max_feasible) {
        let mut cur: Vec<Vec<Option<State>>> = vec![vec![None; k]; d + 1];
        for j in 2..=d {
            for c in 0..k {
                let mut best: Option<State> = None;
                for i in 0..j - 1 {
                    if !run_is_valid(x0, i, j) {
                        continue;
                    }
                    let run = cost[i][j][c];
                    let cands: Vec<State> = if branches == 1 {
                        if i == 0 {
                            vec![State {
                                cost: run,
                                path: vec![(0, c)],
                            }]
                        } else {
                            Vec::new()
                        }
                    } else {
                        (0..k)
                            .filter(|&p| p != c)
                            .filter_map(|p| prev[i][p].as_ref())
                            .map(|s| {
                                let mut path = s.path.clone();
                                path.push((i, c));
                                State {
                                    cost: s.cost + run,
                                    path,
                                }
                            })
                            .collect()
                    };
                    for s in cands {
                        if best.as_ref().is_none_or(|b| better(&s, b)) {
                            best = Some(s);
                        }
                    }
                }
                cur[j][c] = best;
            }
        }
        for s in cur[d].iter().flatten() {
            // fewer branches were tried first and win cost ties
            let wins = |b: &State| s.cost < b.cost || (s.cost == b.cost && s.path.len() == b.path.len() && better(s, b));
            if overall.as_ref().is_none_or(|(b, _)| wins(b)) {
                overall = Some((s.clone(), branches));
            }
        }
        prev = cur;
    }
    let (state, _) = overall.ok_or_else(|| Error::Precondition("no admissible partition".into()))?;
    let mut runs = Vec::new();
    for (idx, &(start, c)) in state.path.iter().enumerate() {
        let end = state.path.get(idx + 1).map_or(d, |p| p.0);
        runs.push(Run {
            start,
            end,
            composition: c,
        });
    }
    Ok(Partition { runs, cost: state.cost })
}

/// Composition map minimizing the table's total loss with at most
/// `max_branches` branches; boundaries sit midway between samples.
pub fn fit_composition_map(table: &LossTable, max_branches: usize) -> Result<(CompositionMap, Partition)> {
    let part = optimal_partition(&table.x0, &table.loss, &table.compositions, max_branches)?;
    let boundaries = part.runs[1..]
        .iter()
        .map(|r| 0.5 * (table.x0[r.start - 1] + table.x0[r.start]))
        .collect();
    let comps = part.runs.iter().map(|r| table.compositions[r.composition].clone()).collect();
    Ok((CompositionMap::new(boundaries, comps)?, part))
}
