//! Evaluation protocol: per seed a fresh noisy dataset and split,
//! random-search tuning on the validation set, a final fit on train plus
//! validation and per-trajectory RMSE on the test set.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comp_map::{CompositionMap, LossTable};
use crate::datasets::{generate, simulate, split, GenConfig, Sample, System};
use crate::editing::{apply_edits, EditSpec};
use crate::error::{Error, Result};
use crate::model::{describe_map, fit_on_map, fit_structure, ModelConfig, SemanticModel, TrajectoryMode};

/// Offset between the noise seeds of the in-domain and out-domain data.
const OUT_DOMAIN_SEED: u64 = 0x5eed;

/// Root mean squared difference of two equally long series.
pub fn rmse(predicted: &[f64], observed: &[f64]) -> f64 {
    assert_eq!(predicted.len(), observed.len(), "rmse of series of different length");
    if observed.is_empty() {
        return 0.0;
    }
    let sq: f64 = predicted.iter().zip(observed).map(|(p, o)| (p - o) * (p - o)).sum();
    (sq / observed.len() as f64).sqrt()
}

/// Anything that maps an initial condition to values on a time grid.
pub trait Predictor: Sync {
    fn predict(&self, x0: f64, times: &[f64]) -> Result<Vec<f64>>;
}

impl Predictor for SemanticModel {
    fn predict(&self, x0: f64, times: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_trajectory(x0, TrajectoryMode::InferC2)?.values(times))
    }
}

/// The simulator that generated the data, in the dataset's scaled units.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub system: System,
    pub gen: GenConfig,
}

impl Predictor for GroundTruth {
    fn predict(&self, x0: f64, times: &[f64]) -> Result<Vec<f64>> {
        let (xs, ts, _) = self.system.scaling();
        let t: Vec<f64> = times.iter().map(|v| v * ts).collect();
        if t.first() != Some(&0.0) {
            return Err(Error::InvalidInput("ground truth needs a grid starting at t = 0".into()));
        }
        Ok(simulate(self.system, x0 * xs, &t, &self.gen))
    }
}

/// Mean over samples of the per-sample RMSE, counting only times after
/// `after` when given.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, samples: &[Sample], after: Option<f64>) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    let per: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let pred = model.predict(s.x0, &s.times)?;
            let keep: Vec<usize> = (0..s.len()).filter(|&i| after.is_none_or(|a| s.times[i] > a)).collect();
            let p: Vec<f64> = keep.iter().map(|&i| pred[i]).collect();
            let o: Vec<f64> = keep.iter().map(|&i| s.values[i]).collect();
            Ok(rmse(&p, &o))
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub system: System,
    pub noise: f64,
    /// Trajectories per dataset; the system default when absent.
    pub samples: Option<usize>,
    pub seeds: Vec<u64>,
    pub trials: usize,
    pub ratios: [f64; 3],
    pub model: ModelConfig,
    pub lr_range: (f64, f64),
    pub end_penalty_range: (f64, f64),
    pub mg_gamma: f64,
    pub logistic_capacity: f64,
    /// Also report RMSE on observations after scaled time 1 (pk only).
    pub out_domain: bool,
    /// Edit applied to every final model, which is then evaluated again.
    pub edit: Option<EditSpec>,
}

impl BenchConfig {
    /// Protocol defaults for `system`; the logistic system uses compositions
    /// of at most two motifs.
    pub fn new(system: System, noise: f64) -> Self {
        let gen = GenConfig::default();
        let mut model = ModelConfig::default();
        if system == System::Logistic {
            model.max_motifs = 2;
        }
        BenchConfig {
            system,
            noise,
            samples: None,
            seeds: (0..5).collect(),
            trials: 20,
            ratios: [0.7, 0.15, 0.15],
            model,
            lr_range: (1e-4, 1.0),
            end_penalty_range: (1e-9, 1e-1),
            mg_gamma: gen.mg_gamma,
            logistic_capacity: gen.logistic_capacity,
            out_domain: false,
            edit: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidInput(format!("ratios must be positive and sum to 1, got {:?}", self.ratios)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("need at least one seed".into()));
        }
        for (name, (lo, hi)) in [("lr_range", self.lr_range), ("end_penalty_range", self.end_penalty_range)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
            }
        }
        if self.out_domain && self.system != System::Pharmacokinetic {
            return Err(Error::InvalidInput("out-domain evaluation exists only for the pk system".into()));
        }
        Ok(())
    }

    fn gen(&self, seed: u64, out_domain: bool) -> GenConfig {
        GenConfig {
            samples: self.samples,
            noise: self.noise,
            seed: if out_domain { seed.wrapping_add(OUT_DOMAIN_SEED) } else { seed },
            out_domain,
            mg_gamma: self.mg_gamma,
            logistic_capacity: self.logistic_capacity,
            ..GenConfig::default()
        }
    }
}

/// Hyperparameters drawn for one tuning trial and their validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub learning_rate: f64,
    pub end_penalty: f64,
    /// Mean validation RMSE; `None` when training failed.
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub test_rmse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_domain_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Failure message; the other fields are empty when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub best: Option<Trial>,
    pub composition_map: Option<String>,
    pub scores: Option<Scores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited: Option<Scores>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Summary { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub seeds: Vec<SeedResult>,
    pub test: Option<Summary>,
    pub out_domain: Option<Summary>,
    pub edited_test: Option<Summary>,
    pub edited_out_domain: Option<Summary>,
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi == lo {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn draw_trials(cfg: &BenchConfig, seed: u64) -> Vec<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.trials)
        .map(|index| Trial {
            index,
            learning_rate: log_uniform(&mut rng, cfg.lr_range),
            end_penalty: log_uniform(&mut rng, cfg.end_penalty_range),
            val_rmse: None,
        })
        .collect()
}

fn with_trial(cfg: &ModelConfig, t: &Trial) -> ModelConfig {
    let mut m = cfg.clone();
    m.train.learning_rate = t.learning_rate;
    m.train.end_penalty = t.end_penalty;
    m
}

fn score(model: &SemanticModel, test: &[Sample], out: Option<&[Sample]>) -> Result<Scores> {
    Ok(Scores {
        test_rmse: evaluate(model, test, None)?,
        out_domain_rmse: out.map(|o| evaluate(model, o, Some(1.0))).transpose()?,
    })
}

fn run_seed(cfg: &BenchConfig, seed: u64) -> Result<SeedResult> {
    let data = generate(cfg.system, &cfg.gen(seed, false))?;
    let (train, val, test) = split(&data, cfg.ratios, seed)?;
    let out_test: Option<Vec<Sample>> = if cfg.out_domain {
        let od = generate(cfg.system, &cfg.gen(seed, true))?;
        let ids: Vec<usize> = test.samples.iter().map(|s| s.id).collect();
        Some(od.samples.into_iter().filter(|s| ids.contains(&s.id)).collect())
    } else {
        None
    };

    let (table, map, _) = fit_structure(&train.samples, &cfg.model)?;
    let mut trials = draw_trials(cfg, seed);
    trials.par_iter_mut().for_each(|t| {
        let m = with_trial(&cfg.model, t);
        t.val_rmse = fit_on_map(&train.samples, map.clone(), Some(&table), &m)
            .and_then(|model| evaluate(&model, &val.samples, None))
            .ok()
            .filter(|v| v.is_finite());
    });
    let best = trials
        .iter()
        .filter(|t| t.val_rmse.is_some())
        .min_by(|a, b| a.val_rmse.partial_cmp(&b.val_rmse).unwrap().then(a.index.cmp(&b.index)))
        .cloned()
        .ok_or_else(|| Error::Convergence(format!("every tuning trial failed for seed {seed}")))?;
    log::info!(
        "seed {seed}: best trial {} (lr {:.3e}, end penalty {:.3e}, validation {:.4})",
        best.index,
        best.learning_rate,
        best.end_penalty,
        best.val_rmse.unwrap()
    );

    let mut pooled = train.samples.clone();
    pooled.extend(val.samples.iter().cloned());
    let final_cfg = with_trial(&cfg.model, &best);
    let (table, map, _): (LossTable, CompositionMap, _) = fit_structure(&pooled, &final_cfg)?;
    let model = fit_on_map(&pooled, map, Some(&table), &final_cfg)?;
    let scores = score(&model, &test.samples, out_test.as_deref())?;
    let edited = match &cfg.edit {
        Some(spec) => {
            let e = apply_edits(&model, spec, &pooled, None)?;
            Some(score(&e, &test.samples, out_test.as_deref())?)
        }
        None => None,
    };
    Ok(SeedResult {
        seed,
        error: None,
        best: Some(best),
        composition_map: Some(describe_map(&model.composition_map)),
        scores: Some(scores),
        edited,
    })
}

/// Runs every seed of `cfg`. Failed seeds are recorded and left out of the
/// summaries.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.check()?;
    let mut seeds: Vec<SeedResult> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            run_seed(cfg, seed).unwrap_or_else(|e| {
                log::warn!("seed {seed} failed and is excluded: {e}");
                SeedResult {
                    seed,
                    error: Some(e.to_string()),
                    best: None,
                    composition_map: None,
                    scores: None,
                    edited: None,
                }
            })
        })
        .collect();
    seeds.sort_by_key(|s| s.seed);
    let pick = |f: &dyn Fn(&SeedResult) -> Option<f64>| Summary::of(&seeds.iter().filter_map(f).collect::<Vec<_>>());
    Ok(BenchReport {
        test: pick(&|s| s.scores.as_ref().map(|x| x.test_rmse)),
        out_domain: pick(&|s| s.scores.as_ref().and_then(|x| x.out_domain_rmse)),
        edited_test: pick(&|s| s.edited.as_ref().map(|x| x.test_rmse)),
        edited_out_domain: pick(&|s| s.edited.as_ref().and_then(|x| x.out_domain_rmse)),
        config: cfg.clone(),
        seeds,
    })
}

fn cell(s: Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:.3} ({:.3})", s.mean, s.std),
        None => "n/a".into(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

impl BenchReport {
    pub fn n_failed(&self) -> usize {
        self.seeds.iter().filter(|s| s.error.is_some()).count()
    }

    pub fn to_markdown(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let mut head = vec!["System", "Noise", "Test RMSE"];
        let mut row = vec![c.system.name().to_string(), format!("{}", c.noise), cell(self.test)];
        if c.out_domain {
            head.push("Out-domain RMSE");
            row.push(cell(self.out_domain));
        }
        if c.edit.is_some() {
            head.push("Edited test RMSE");
            row.push(cell(self.edited_test));
            if c.out_domain {
                head.push("Edited out-domain RMSE");
                row.push(cell(self.edited_out_domain));
            }
        }
        let _ = writeln!(out, "| {} |", head.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(head.len()));
        let _ = writeln!(out, "| {} |", row.join(" | "));
        let _ = writeln!(out);
        let _ = writeln!(out, "| Seed | Test RMSE | Learning rate | End penalty | Composition map |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for s in &self.seeds {
            match (&s.error, &s.best, &s.scores) {
                (None, Some(b), Some(sc)) => {
                    let _ = writeln!(
                        out,
                        "| {} | {:.4} | {:.3e} | {:.3e} | {} |",
                        s.seed,
                        sc.test_rmse,
                        b.learning_rate,
                        b.end_penalty,
                        s.composition_map.as_deref().unwrap_or("")
                    );
                }
                _ => {
                    let _ = writeln!(out, "| {} | failed | | | {} |", s.seed, s.error.as_deref().unwrap_or(""));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "seed,status,test_rmse,out_domain_rmse,edited_test_rmse,edited_out_domain_rmse,learning_rate,end_penalty,val_rmse\n",
        );
        for s in &self.seeds {
            let sc = s.scores.as_ref();
            let ed = s.edited.as_ref();
            let b = s.best.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.seed,
                if s.error.is_some() { "failed" } else { "ok" },
                opt(sc.map(|x| x.test_rmse)),
                opt(sc.and_then(|x| x.out_domain_rmse)),
                opt(ed.map(|x| x.test_rmse)),
                opt(ed.and_then(|x| x.out_domain_rmse)),
                opt(b.map(|x| x.learning_rate)),
                opt(b.map(|x| x.end_penalty)),
                opt(b.and_then(|x| x.val_rmse)),
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
