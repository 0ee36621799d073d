//! End-to-end semantic model: composition map plus one property sub-map per
//! composition, and the trajectory renderers built on top of it.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::comp_map::{fit_composition_map, CompositionMap, LossTable, Partition};
use crate::cubic::CubicSpline;
use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::prop_map::{
    fit_property_submap, ridge_weights, Constraints, PropertySubMap, Ranges, SampleFitConfig, SubMapInit,
    TrainConfig,
};
use crate::semantics::{enumerate_compositions, Composition, LibraryFilter, SemanticRep};
use crate::traj_c2::{predict_c2, C2Config, C2Status};
use crate::unbounded::{predict_tail, Tail};

pub const MODEL_VERSION: &str = "semode-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub max_motifs: usize,
    /// Largest number of branches of the composition map.
    pub max_branches: usize,
    #[serde(default)]
    pub library_filter: LibraryFilter,
    #[serde(default)]
    pub sample_fit: SampleFitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub c2: C2Config,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_motifs: 3,
            max_branches: 3,
            library_filter: LibraryFilter::default(),
            sample_fit: SampleFitConfig::default(),
            train: TrainConfig::default(),
            c2: C2Config::default(),
        }
    }
}

impl ModelConfig {
    pub fn library(&self) -> Result<Vec<Composition>> {
        let lib = enumerate_compositions(self.max_motifs, &self.library_filter);
        if lib.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no composition with at most {} motifs passes the library filter",
                self.max_motifs
            )));
        }
        Ok(lib)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticModel {
    pub version: String,
    pub composition_map: CompositionMap,
    pub submaps: Vec<PropertySubMap>,
    pub config: ModelConfig,
    pub ranges: Ranges,
    pub x0_range: (f64, f64),
    /// Constraints applied to every branch they fit.
    #[serde(default)]
    pub global_constraints: Constraints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    TrainC0,
    InferC2,
}

impl std::str::FromStr for TrajectoryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_c0" | "c0" => Ok(TrajectoryMode::TrainC0),
            "infer_c2" | "c2" => Ok(TrajectoryMode::InferC2),
            _ => Err(Error::InvalidInput(format!("unknown trajectory mode `{s}` (train_c0, infer_c2)"))),
        }
    }
}

/// Bounded spline part followed by the analytic tail.
#[derive(Debug, Clone)]
pub struct PredictedTrajectory {
    pub semantics: SemanticRep,
    pub bounded: Option<CubicSpline>,
    pub tail: Tail<f64>,
    /// Outcome of the C² fit; `None` in C⁰ mode or without bounded motifs.
    pub c2_status: Option<C2Status>,
}

impl PredictedTrajectory {
    pub fn t_end(&self) -> f64 {
        self.semantics.properties.t_end()
    }

    /// Value or derivative (`order` ≤ 2) at `t`; times before `t_0` extend
    /// the first piece.
    pub fn eval(&self, t: f64, order: u8) -> f64 {
        match &self.bounded {
            Some(s) if t < self.t_end() => s.eval_unchecked(t, order),
            _ => self.tail.eval(t, order),
        }
    }

    pub fn values(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.eval(t, 0)).collect()
    }
}

/// Everything produced while fitting, for inspection and export.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: SemanticModel,
    pub table: LossTable,
    pub partition: Partition,
}

fn x0_span(samples: &[Sample]) -> Result<(f64, f64)> {
    let lo = samples.iter().map(|s| s.x0).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.x0).fold(f64::NEG_INFINITY, f64::max);
    if !(lo <= hi) {
        return Err(Error::InvalidInput("no samples".into()));
    }
    Ok((lo, hi))
}

/// Fits the composition map on the library of `cfg`, then one sub-map per
/// composition in use.
pub fn fit_model(samples: &[Sample], cfg: &ModelConfig) -> Result<FitOutput> {
    let (table, map, partition) = fit_structure(samples, cfg)?;
    let model = fit_on_map(samples, map, Some(&table), cfg)?;
    Ok(FitOutput { model, table, partition })
}

/// Scores every library composition on every sample and fits the
/// composition map.
pub fn fit_structure(samples: &[Sample], cfg: &ModelConfig) -> Result<(LossTable, CompositionMap, Partition)> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {}", samples.len())));
    }
    let ranges = Ranges::from_samples(samples)?;
    let library = cfg.library()?;
    log::info!("scoring {} samples against {} compositions", samples.len(), library.len());
    let table = LossTable::compute(samples, &library, &ranges, &cfg.sample_fit)?;
    let (map, partition) = fit_composition_map(&table, cfg.max_branches)?;
    log::info!("composition map: {}", describe_map(&map));
    Ok((table, map, partition))
}

/// Trains the property sub-maps for a given composition map. Per-sample
/// fits found in `table` seed the training.
pub fn fit_on_map(
    samples: &[Sample],
    map: CompositionMap,
    table: Option<&LossTable>,
    cfg: &ModelConfig,
) -> Result<SemanticModel> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {}", samples.len())));
    }
    let ranges = Ranges::from_samples(samples)?;
    let global = Constraints::default();
    let inits = |c: &Composition, members: &[&Sample]| table.and_then(|t| table_raws(t, c, members)).map(Start::Raws);
    let submaps = fit_submaps(&map, samples, &ranges, cfg, |_| global.clone(), inits)?;
    Ok(SemanticModel {
        version: MODEL_VERSION.into(),
        composition_map: map,
        submaps,
        config: cfg.clone(),
        ranges,
        x0_range: x0_span(samples)?,
        global_constraints: global,
    })
}

pub(crate) fn describe_map(map: &CompositionMap) -> String {
    let mut parts = Vec::new();
    for (i, c) in map.compositions().iter().enumerate() {
        match map.boundaries().get(i) {
            Some(b) => parts.push(format!("({c}) < {b:.4}")),
            None => parts.push(format!("({c})")),
        }
    }
    parts.join(" | ")
}

/// Per-sample raw fits of `c` from the loss table, if all are available.
fn table_raws(table: &LossTable, c: &Composition, members: &[&Sample]) -> Option<Vec<(f64, Vec<f64>)>> {
    let col = table.compositions.iter().position(|k| k == c)?;
    let rows: HashMap<usize, usize> = table.sample_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let mut out = Vec::new();
    for s in members {
        if let Some(raw) = rows.get(&s.id).and_then(|&r| table.raws[r][col].clone()) {
            out.push((s.x0, raw));
        }
    }
    (out.len() >= 2).then_some(out)
}

/// Samples whose x₀ falls in a branch carrying `c`.
pub(crate) fn members<'a>(map: &CompositionMap, samples: &'a [Sample], c: &Composition) -> Vec<&'a Sample> {
    samples.iter().filter(|s| map.predict(s.x0) == c).collect()
}

/// Where sub-map training starts from.
pub(crate) enum Start {
    /// `(x0, raw)` pairs, regressed on the basis by ridge.
    Raws(Vec<(f64, Vec<f64>)>),
    /// Weights over the basis of the member samples.
    Weights(Vec<Vec<f64>>),
}

/// Trains one sub-map per distinct composition of `map` in parallel.
/// Compositions without a `Start` begin from fresh per-sample fits.
pub(crate) fn fit_submaps<C, I>(
    map: &CompositionMap,
    samples: &[Sample],
    ranges: &Ranges,
    cfg: &ModelConfig,
    constraints_of: C,
    inits: I,
) -> Result<Vec<PropertySubMap>>
where
    C: Fn(&Composition) -> Constraints + Sync,
    I: Fn(&Composition, &[&Sample]) -> Option<Start> + Sync,
{
    map.distinct()
        .par_iter()
        .map(|c| {
            let mem = members(map, samples, c);
            let owned: Vec<Sample> = mem.iter().map(|s| (*s).clone()).collect();
            let cons = constraints_of(c);
            let init_weights = match inits(c, &mem) {
                Some(Start::Raws(pairs)) => {
                    let (x0s, raws): (Vec<f64>, Vec<Vec<f64>>) = pairs.into_iter().unzip();
                    let basis = submap_basis(&owned)?;
                    Some(ridge_weights(&basis, &x0s, &raws, cfg.train.ridge)?)
                }
                Some(Start::Weights(w)) => Some(w),
                None => None,
            };
            let init = match &init_weights {
                Some(w) => SubMapInit::Weights(w),
                None => SubMapInit::Fresh,
            };
            log::info!("training sub-map for ({c}) on {} samples", owned.len());
            fit_property_submap(&owned, c, ranges, &cons, &cfg.train, init)
        })
        .collect()
}

/// Basis over the x₀ range of the samples a sub-map is trained on.
pub(crate) fn submap_basis(samples: &[Sample]) -> Result<BasisSet> {
    let (lo, hi) = x0_span(samples)?;
    BasisSet::new(lo, hi)
}

impl SemanticModel {
    pub fn submap(&self, c: &Composition) -> Result<&PropertySubMap> {
        self.submaps
            .iter()
            .find(|m| &m.composition == c)
            .ok_or_else(|| Error::Structural(format!("no sub-map for composition ({c})")))
    }

    pub fn predict_composition(&self, x0: f64) -> &Composition {
        self.composition_map.predict(x0)
    }

    pub fn predict_semantics(&self, x0: f64) -> Result<SemanticRep> {
        crate::error::ensure_finite("x0", x0)?;
        let c = self.predict_composition(x0);
        Ok(SemanticRep {
            composition: c.clone(),
            properties: self.submap(c)?.predict(x0)?,
        })
    }

    pub fn predict_trajectory(&self, x0: f64, mode: TrajectoryMode) -> Result<PredictedTrajectory> {
        crate::error::ensure_finite("x0", x0)?;
        let c = self.predict_composition(x0);
        let realized = self.submap(c)?.realize(x0)?;
        let properties = realized.to_properties();
        let semantics = SemanticRep {
            composition: c.clone(),
            properties: properties.clone(),
        };
        let c0 = PredictedTrajectory {
            semantics: semantics.clone(),
            bounded: realized.bounded.as_ref().and_then(|b| b.to_spline()),
            tail: realized.tail,
            c2_status: None,
        };
        if mode == TrajectoryMode::TrainC0 || c.n_bounded() == 0 {
            return Ok(c0);
        }
        let fit = predict_c2(c, &properties, &self.config.c2)?;
        let t_end = properties.t_end();
        let sp = &fit.spline;
        let (x, d1, d2) = (
            sp.eval_unchecked(t_end, 0),
            sp.eval_unchecked(t_end, 1),
            sp.eval_unchecked(t_end, 2),
        );
        let tail = predict_tail(c.last(), &properties.tail, t_end, x, d1, d2).or_else(|_| {
            predict_tail(
                c.last(),
                &properties.tail,
                t_end,
                properties.x_end(),
                properties.d1_end,
                properties.d2_end,
            )
        })?;
        Ok(PredictedTrajectory {
            semantics,
            bounded: Some(fit.spline),
            tail,
            c2_status: Some(fit.status),
        })
    }

    /// Structural consistency of a deserialized model.
    pub fn check(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "field `version`: expected {MODEL_VERSION}, found {}",
                self.version
            )));
        }
        for c in self.composition_map.compositions() {
            self.submap(c)
                .map_err(|_| Error::InvalidInput(format!("field `submaps`: missing composition ({c})")))?;
        }
        for (i, m) in self.submaps.iter().enumerate() {
            m.check_shape()
                .map_err(|e| Error::InvalidInput(format!("field `submaps[{i}].weights`: {e}")))?;
            m.effective_constraints().check_for(&m.composition, &m.ranges)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: SemanticModel = serde_json::from_str(s)
            .map_err(|e| Error::InvalidInput(format!("malformed model: {e}")))?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Branches with their property curves sampled at `points` x₀ values
    /// each (clipped to the training range).
    pub fn inspect(&self, points: usize) -> Result<Inspection> {
        let (lo, hi) = self.x0_range;
        let map = &self.composition_map;
        let mut branches = Vec::new();
        for (i, c) in map.compositions().iter().enumerate() {
            let a = if i == 0 { lo } else { map.boundaries()[i - 1] };
            let b = map.boundaries().get(i).copied().unwrap_or(hi);
            let (a, b) = (a.max(lo), b.min(hi));
            let mut curves = Vec::with_capacity(points);
            for k in 0..points {
                let x0 = if points == 1 { 0.5 * (a + b) } else { a + (b - a) * k as f64 / (points - 1) as f64 };
                // right-open branches: nudge the last point back inside
                let x0 = if k + 1 == points && i + 1 < map.n_branches() && x0 > map.boundaries()[i] { map.boundaries()[i] } else { x0 };
                let rep = self.predict_semantics(x0)?;
                curves.push(PropertyPoint { x0, properties: rep.properties });
            }
            branches.push(BranchView {
                index: i,
                lower: if i == 0 { None } else { Some(map.boundaries()[i - 1]) },
                upper: map.boundaries().get(i).copied(),
                composition: c.clone(),
                pinned: self.submap(c)?.effective_constraints(),
                curves,
            });
        }
        Ok(Inspection {
            version: self.version.clone(),
            x0_range: self.x0_range,
            ranges: self.ranges,
            branches,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyPoint {
    pub x0: f64,
    pub properties: crate::semantics::PropertySet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchView {
    pub index: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub composition: Composition,
    pub pinned: Constraints,
    pub curves: Vec<PropertyPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inspection {
    pub version: String,
    pub x0_range: (f64, f64),
    pub ranges: Ranges,
    pub branches: Vec<BranchView>,
}
