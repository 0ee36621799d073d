//! Human edits of a fitted model: pinning or bounding properties,
//! restricting the composition library, fixing the composition map, and
//! refitting whatever stays free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::comp_map::{fit_composition_map, CompositionMap, LossTable};
use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::model::{describe_map, fit_submaps, submap_basis, SemanticModel, Start};
use crate::prop_map::{
    project_properties, properties_to_raw, Constraint, Constraints, PropertyName, TrainConfig,
};
use crate::semantics::{Composition, LibraryFilter, MotifKind};

/// One edit. `branch` indexes the branches of the model being edited;
/// without it the edit applies to every branch where the property exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    PinProperty {
        #[serde(default)]
        branch: Option<usize>,
        property: PropertyName,
        value: f64,
    },
    BoundProperty {
        #[serde(default)]
        branch: Option<usize>,
        property: PropertyName,
        lo: f64,
        hi: f64,
    },
    RestrictLibrary {
        filter: LibraryFilter,
        #[serde(default)]
        max_motifs: Option<usize>,
    },
    FixCompositionMap {
        map: CompositionMap,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    pub edits: Vec<Edit>,
    /// Retrain sub-maps from fresh per-sample fits instead of the current weights.
    #[serde(default)]
    pub from_scratch: bool,
}

impl EditSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn has_structure_edits(&self) -> bool {
        self.edits
            .iter()
            .any(|e| matches!(e, Edit::RestrictLibrary { .. } | Edit::FixCompositionMap { .. }))
    }
}

fn applies(name: PropertyName, c: &Composition) -> bool {
    match name {
        PropertyName::H => c.last().kind() == MotifKind::Asymptote,
        PropertyName::Gamma => c.last().kind() == MotifKind::Divergent,
        PropertyName::TEnd => c.n_bounded() > 0,
        PropertyName::XStart => true,
    }
}

/// Validated edits, ready for refitting.
#[derive(Debug, Clone)]
struct Plan {
    filter: Option<(LibraryFilter, usize)>,
    fixed_map: Option<CompositionMap>,
    global: Constraints,
    /// Constraints bound to one composition through a branch index.
    local: BTreeMap<Composition, Constraints>,
}

impl Plan {
    fn constraints_for(&self, c: &Composition) -> Constraints {
        let mut out = Constraints::default();
        for (name, con) in self.global.iter() {
            if applies(name, c) {
                out.set(name, con).expect("checked when planned");
            }
        }
        if let Some(local) = self.local.get(c) {
            for (name, con) in local.iter() {
                out.set(name, con).expect("checked when planned");
            }
        }
        out
    }
}

fn plan(model: &SemanticModel, spec: &EditSpec) -> Result<Plan> {
    let mut plan = Plan {
        filter: None,
        fixed_map: None,
        global: model.global_constraints.clone(),
        local: BTreeMap::new(),
    };
    for m in &model.submaps {
        let own: Constraints = m
            .effective_constraints()
            .iter()
            .filter(|(name, con)| model.global_constraints.get(*name) != Some(*con))
            .fold(Constraints::default(), |mut acc, (n, c)| {
                acc.set(n, c).expect("stored constraints are valid");
                acc
            });
        if !own.is_empty() {
            plan.local.insert(m.composition.clone(), own);
        }
    }
    let branches = model.composition_map.compositions();
    for (i, edit) in spec.edits.iter().enumerate() {
        let at = |msg: String| Error::InvalidInput(format!("edits[{i}]: {msg}"));
        let (branch, name, con) = match edit {
            Edit::RestrictLibrary { filter, max_motifs } => {
                let k = max_motifs.unwrap_or(model.config.max_motifs);
                if k == 0 {
                    return Err(at("max_motifs must be at least 1".into()));
                }
                plan.filter = Some((filter.clone(), k));
                continue;
            }
            Edit::FixCompositionMap { map } => {
                plan.fixed_map = Some(map.clone());
                continue;
            }
            Edit::PinProperty { branch, property, value } => (*branch, *property, Constraint::Pinned { value: *value }),
            Edit::BoundProperty { branch, property, lo, hi } => {
                (*branch, *property, Constraint::Bounded { lo: *lo, hi: *hi })
            }
        };
        match branch {
            None => {
                plan.global.set(name, con).map_err(|e| at(e.to_string()))?;
                for cons in plan.local.values_mut() {
                    cons.remove(name);
                }
            }
            Some(b) => {
                let c = branches.get(b).ok_or_else(|| {
                    at(format!("branch {b} does not exist (the model has {} branches)", branches.len()))
                })?;
                if !applies(name, c) {
                    return Err(at(format!("branch {b} ({c}) has no property `{name}`")));
                }
                let cons = plan.local.entry(c.clone()).or_default();
                cons.set(name, con).map_err(|e| at(e.to_string()))?;
            }
        }
    }
    if let (Some((filter, k)), Some(map)) = (&plan.filter, &plan.fixed_map) {
        if let Some(c) = map.compositions().iter().find(|c| !filter.accepts(c) || c.len() > *k) {
            return Err(Error::InvalidInput(format!(
                "fixed composition map uses ({c}), which the library restriction excludes"
            )));
        }
    }
    Ok(plan)
}

fn check_constraints(plan: &Plan, model: &SemanticModel, map: &CompositionMap) -> Result<()> {
    for (name, _) in plan.global.iter() {
        if !model.global_constraints.get(name).is_some() && !map.compositions().iter().any(|c| applies(name, c)) {
            return Err(Error::InvalidInput(format!("no branch of the composition map has property `{name}`")));
        }
    }
    for c in map.distinct() {
        plan.constraints_for(&c).check_for(&c, &model.ranges)?;
    }
    Ok(())
}

/// Rejects asymptote constraints the data cannot satisfy: the tail must
/// approach `h` from the side the last motif moves towards.
fn check_domain(plan: &Plan, model: &SemanticModel, map: &CompositionMap, x0s: &[f64]) -> Result<()> {
    for c in map.distinct() {
        let Some(con) = plan.constraints_for(&c).get(PropertyName::H) else {
            continue;
        };
        let s = c.last().mon_sign();
        for &x0 in x0s.iter().filter(|&&x0| map.predict(x0) == &c) {
            let x_end = model.predict_semantics(x0)?.properties.x_end();
            let best = match con {
                Constraint::Pinned { value } => value,
                Constraint::Bounded { lo, hi } => {
                    if s > 0.0 {
                        hi
                    } else {
                        lo
                    }
                }
            };
            if !(s * (best - x_end) > 0.0) {
                let side = if s > 0.0 { "above" } else { "below" };
                return Err(Error::Precondition(format!(
                    "h must lie {side} x(t_end) for ({c}), but at x0 = {x0} the model predicts x(t_end) = {x_end:.6} \
                     and the constraint allows at best h = {best}"
                )));
            }
        }
    }
    Ok(())
}

/// Raw vectors of the current model's properties for `c`, projected onto
/// the new constraints.
fn warm_raws(model: &SemanticModel, c: &Composition, cons: &Constraints, mem: &[&Sample]) -> Option<Vec<(f64, Vec<f64>)>> {
    let old = model.submap(c).ok()?;
    let out: Vec<(f64, Vec<f64>)> = mem
        .iter()
        .filter_map(|s| {
            let mut p = old.predict(s.x0).ok()?;
            project_properties(&mut p, cons);
            let raw = properties_to_raw(&p, c, &model.ranges, cons).ok()?;
            raw.iter().all(|v| v.is_finite()).then_some((s.x0, raw))
        })
        .collect();
    (out.len() >= 2).then_some(out)
}

/// Applies `spec` to `model` and refits on `samples`. The input model is left
/// untouched. `train` overrides the training settings stored in the model.
pub fn apply_edits(
    model: &SemanticModel,
    spec: &EditSpec,
    samples: &[Sample],
    train: Option<&TrainConfig>,
) -> Result<SemanticModel> {
    model.check()?;
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {}", samples.len())));
    }
    let plan = plan(model, spec)?;
    let x0s: Vec<f64> = samples.iter().map(|s| s.x0).collect();
    let mut cfg = model.config.clone();
    if let Some(t) = train {
        cfg.train = *t;
    }
    if let Some((filter, k)) = &plan.filter {
        cfg.library_filter = filter.clone();
        cfg.max_motifs = *k;
    }

    // Everything that can be rejected without training is checked first.
    if let Some(map) = &plan.fixed_map {
        check_constraints(&plan, model, map)?;
        check_domain(&plan, model, map, &x0s)?;
    } else if plan.filter.is_none() {
        check_constraints(&plan, model, &model.composition_map)?;
        check_domain(&plan, model, &model.composition_map, &x0s)?;
    }
    let map = match (&plan.fixed_map, &plan.filter) {
        (Some(map), _) => map.clone(),
        (None, Some(_)) => {
            let library = cfg.library()?;
            log::info!("refitting the composition map over {} compositions", library.len());
            let table = LossTable::compute(samples, &library, &model.ranges, &cfg.sample_fit)?;
            let (map, _) = fit_composition_map(&table, cfg.max_branches)?;
            log::info!("composition map: {}", describe_map(&map));
            check_constraints(&plan, model, &map)?;
            check_domain(&plan, model, &map, &x0s)?;
            map
        }
        (None, None) => model.composition_map.clone(),
    };

    let keep_weights = !spec.has_structure_edits();
    let start = |c: &Composition, mem: &[&Sample]| -> Option<Start> {
        if spec.from_scratch {
            return None;
        }
        let cons = plan.constraints_for(c);
        let old = model.submap(c).ok()?;
        if keep_weights && old.overrides.is_empty() && old.constraints == cons {
            let owned: Vec<Sample> = mem.iter().map(|s| (*s).clone()).collect();
            if submap_basis(&owned).ok()? == old.basis {
                return Some(Start::Weights(old.weights.clone()));
            }
        }
        warm_raws(model, c, &cons, mem).map(Start::Raws)
    };
    let submaps = fit_submaps(&map, samples, &model.ranges, &cfg, |c| plan.constraints_for(c), start)?;
    let edited = SemanticModel {
        version: model.version.clone(),
        composition_map: map,
        submaps,
        config: cfg,
        ranges: model.ranges,
        x0_range: model.x0_range,
        global_constraints: plan.global.clone(),
    };
    edited.check()?;
    Ok(edited)
}

/// Applies pins and bounds without retraining: they are laid over the
/// sub-map predictions, and every other property keeps its value.
pub fn pin_without_refit(model: &SemanticModel, spec: &EditSpec) -> Result<SemanticModel> {
    model.check()?;
    if spec.has_structure_edits() {
        return Err(Error::InvalidInput("library and composition-map edits need a refit on data".into()));
    }
    let plan = plan(model, spec)?;
    check_constraints(&plan, model, &model.composition_map)?;
    let (lo, hi) = model.x0_range;
    let grid: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    check_domain(&plan, model, &model.composition_map, &grid)?;
    let mut out = model.clone();
    out.global_constraints = plan.global.clone();
    for sub in &mut out.submaps {
        let mut overrides = Constraints::default();
        for (name, con) in plan.constraints_for(&sub.composition).iter() {
            if sub.constraints.get(name) != Some(con) {
                overrides.set(name, con)?;
            }
        }
        sub.overrides = overrides;
    }
    out.check()?;
    Ok(out)
}
