//! Observed trajectories and the synthetic systems used for evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub x0: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Sample {
    pub fn new(id: usize, x0: f64, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "sample {id}: {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(format!("sample {id}: times not strictly increasing")));
        }
        if !x0.is_finite() || times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("sample {id}: non-finite entry")));
        }
        Ok(Sample { id, x0, times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub noise: f64,
    pub seed: u64,
    pub x_scale: f64,
    pub t_scale: f64,
    #[serde(default)]
    pub parameters: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn x0_range(&self) -> Option<(f64, f64)> {
        let mut it = self.samples.iter().map(|s| s.x0);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        let lo = self.samples.iter().filter_map(|s| s.times.first()).copied().reduce(f64::min)?;
        let hi = self.samples.iter().filter_map(|s| s.times.last()).copied().reduce(f64::max)?;
        Some((lo, hi))
    }

    pub fn n_observations(&self) -> usize {
        self.samples.iter().map(Sample::len).sum()
    }

    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset {
            samples: ids.iter().map(|&i| self.samples[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Sidecar metadata path for a dataset CSV: `data.csv` -> `data.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    csv.with_file_name(format!("{stem}.meta.json"))
}

#[derive(Serialize, Deserialize)]
struct Row {
    sample_id: usize,
    x0: f64,
    t: f64,
    y: f64,
}

fn row_error(e: &csv::Error, header: &csv::StringRecord, line: usize) -> Error {
    if let csv::ErrorKind::Deserialize { err, .. } = e.kind() {
        if let Some(name) = err.field().and_then(|i| header.get(i as usize)) {
            return Error::InvalidInput(format!("dataset row {line}: field `{name}`: {}", err.kind()));
        }
    }
    Error::InvalidInput(format!("dataset row {line}: {e}"))
}

impl Dataset {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for s in &self.samples {
            for (&t, &y) in s.times.iter().zip(&s.values) {
                out.serialize(Row { sample_id: s.id, x0: s.x0, t, y })?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Groups rows by `sample_id` in order of first appearance.
    pub fn read_csv<R: std::io::Read>(r: R, meta: DatasetMeta) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut samples: Vec<Sample> = Vec::new();
        let mut index = std::collections::HashMap::new();
        let header = rdr
            .headers()
            .map_err(|e| Error::InvalidInput(format!("dataset header: {e}")))?
            .clone();
        for (line, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| row_error(&e, &header, line + 2))?;
            let k = *index.entry(row.sample_id).or_insert_with(|| {
                samples.push(Sample { id: row.sample_id, x0: row.x0, times: vec![], values: vec![] });
                samples.len() - 1
            });
            if samples[k].x0 != row.x0 {
                return Err(Error::InvalidInput(format!(
                    "dataset row {}: field `x0` changes within sample {}",
                    line + 2,
                    row.sample_id
                )));
            }
            samples[k].times.push(row.t);
            samples[k].values.push(row.y);
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        let samples = samples
            .into_iter()
            .map(|s| Sample::new(s.id, s.x0, s.times, s.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples, meta })
    }

    /// Writes the CSV and its metadata sidecar.
    pub fn save(&self, csv: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(csv)?)?;
        std::fs::write(meta_path(csv), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Reads a CSV; metadata comes from the sidecar when present.
    pub fn load(csv: &Path) -> Result<Dataset> {
        let mp = meta_path(csv);
        let meta = if mp.exists() {
            serde_json::from_str(&std::fs::read_to_string(&mp)?)?
        } else {
            DatasetMeta {
                system: "unknown".into(),
                noise: 0.0,
                seed: 0,
                x_scale: 1.0,
                t_scale: 1.0,
                parameters: Default::default(),
            }
        };
        Dataset::read_csv(std::fs::File::open(csv)?, meta)
    }
}

/// Synthetic systems with their default sizes and rescalings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Logistic,
    GeneralOde,
    #[serde(rename = "pk")]
    Pharmacokinetic,
    MackeyGlass,
    Integro,
}

impl System {
    pub const ALL: [System; 5] = [
        System::Logistic,
        System::GeneralOde,
        System::Pharmacokinetic,
        System::MackeyGlass,
        System::Integro,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::Logistic => "logistic",
            System::GeneralOde => "general_ode",
            System::Pharmacokinetic => "pk",
            System::MackeyGlass => "mackey_glass",
            System::Integro => "integro",
        }
    }

    pub fn default_samples(self) -> usize {
        match self {
            System::Pharmacokinetic | System::Integro => 100,
            _ => 200,
        }
    }

    /// Initial conditions in the system's own units.
    fn x0_range(self) -> (f64, f64) {
        match self {
            System::Logistic => (0.2, 4.0),
            System::GeneralOde => (-3.0, 3.0),
            System::Pharmacokinetic => (0.0, 20.0),
            System::MackeyGlass => (1.0, 3.0),
            System::Integro => (-1.0, 1.0),
        }
    }

    /// `(x divisor, t divisor, observation horizon)` in the system's units.
    pub fn scaling(self) -> (f64, f64, f64) {
        match self {
            System::Logistic | System::Integro => (1.0, 1.0, 5.0),
            System::GeneralOde => (3.0, 5.0, 5.0),
            System::Pharmacokinetic => (20.0, 24.0, 24.0),
            System::MackeyGlass => (3.0, 30.0, 30.0),
        }
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "logistic" => Ok(System::Logistic),
            "general_ode" | "general" => Ok(System::GeneralOde),
            "pk" | "pharmacokinetic" => Ok(System::Pharmacokinetic),
            "mackey_glass" | "mg" => Ok(System::MackeyGlass),
            "integro" | "integro_de" => Ok(System::Integro),
            _ => Err(Error::InvalidInput(format!(
                "unknown system `{s}` (logistic, general_ode, pk, mackey_glass, integro)"
            ))),
        }
    }
}

pub const PK_CL: f64 = 80.247;
pub const PK_V1: f64 = 486.0;
pub const PK_Q: f64 = 79.0;
pub const PK_V2: f64 = 271.0;
pub const PK_KTR: f64 = 3.34;
pub const PK_DEPOT: f64 = 10.0;

/// Mackey-Glass constants other than the decay rate.
pub const MG_BETA: f64 = 0.4;
pub const MG_THETA: f64 = 1.0;
pub const MG_TAU: f64 = 4.0;
pub const MG_N: i32 = 4;
/// Default decay rate; puts the equilibrium at x = 1.
pub const MG_GAMMA: f64 = 0.2;

const GAUSS_W: [f64; 3] = [0.4, -0.3, 0.3];
const GAUSS_MU: [[f64; 2]; 3] = [[0.0, 0.0], [3.0, 3.0], [-1.0, -2.0]];
const GAUSS_VAR: [f64; 3] = [1.0, 1.0, 2.0];

/// Right-hand side of the general ODE: fifty times the density of a
/// three-component Gaussian mixture in `(x, t)` with isotropic covariances.
pub fn general_ode_rhs(x: f64, t: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..3 {
        let (dx, dt) = (x - GAUSS_MU[i][0], t - GAUSS_MU[i][1]);
        let v = GAUSS_VAR[i];
        total += GAUSS_W[i] * (-(dx * dx + dt * dt) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v);
    }
    50.0 * total
}

/// Classic RK4 through the observation times with steps of at most
/// `max_step`; returns the state at every time in `times` (the first is the
/// initial time).
pub fn rk4_solve<F>(rhs: F, y0: &[f64], times: &[f64], max_step: f64) -> Vec<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut out = vec![y.clone()];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for w in times.windows(2) {
        let steps = ((w[1] - w[0]) / max_step).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / steps as f64;
        for s in 0..steps {
            let t = w[0] + s as f64 * h;
            rhs(t, &y, &mut k1);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            rhs(t + 0.5 * h, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            rhs(t + 0.5 * h, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h * k3[i];
            }
            rhs(t + h, &tmp, &mut k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out.push(y.clone());
    }
    out
}

/// RK4 for the scalar delay equation `x' = rhs(x(t), x(t - tau))` with
/// constant history `x0`, on a grid whose step divides `tau`. Delayed and
/// output values between grid points use cubic Hermite interpolation.
pub fn dde_solve<F>(rhs: F, x0: f64, tau: f64, times: &[f64], max_step: f64) -> Vec<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    let per_tau = (tau / max_step).ceil().max(1.0) as usize;
    let h = tau / per_tau as f64;
    let steps = ((t_end - t0) / h).ceil() as usize + 1;
    let mut xs = Vec::with_capacity(steps + 1);
    let mut fs = Vec::with_capacity(steps + 1);
    let at = |xs: &[f64], fs: &[f64], s: f64| -> f64 {
        if s <= t0 {
            return x0;
        }
        let u = (s - t0) / h;
        let k = (u.floor() as usize).min(xs.len() - 2);
        let w = u - k as f64;
        hermite(xs[k], xs[k + 1], fs[k], fs[k + 1], h, w)
    };
    xs.push(x0);
    fs.push(rhs(x0, x0));
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let x = xs[k];
        let delayed = |s: f64, xs: &[f64], fs: &[f64]| {
            if s - tau <= t0 {
                x0
            } else {
                at(xs, fs, s - tau)
            }
        };
        let d0 = delayed(t, &xs, &fs);
        let dm = delayed(t + 0.5 * h, &xs, &fs);
        let d1 = delayed(t + h, &xs, &fs);
        let k1 = rhs(x, d0);
        let k2 = rhs(x + 0.5 * h * k1, dm);
        let k3 = rhs(x + 0.5 * h * k2, dm);
        let k4 = rhs(x + h * k3, d1);
        let next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        xs.push(next);
        fs.push(rhs(next, delayed(t + h, &xs, &fs)));
    }
    times.iter().map(|&t| if t <= t0 { x0 } else { at(&xs, &fs, t) }).collect()
}

fn hermite(p0: f64, p1: f64, m0: f64, m1: f64, h: f64, w: f64) -> f64 {
    let w2 = w * w;
    let w3 = w2 * w;
    (2.0 * w3 - 3.0 * w2 + 1.0) * p0 + (w3 - 2.0 * w2 + w) * h * m0 + (-2.0 * w3 + 3.0 * w2) * p1 + (w3 - w2) * h * m1
}

/// Noise-free observations of `system` from initial condition `x0` (system
/// units) at `times` (system units), in scaled units.
pub fn simulate(system: System, x0: f64, times: &[f64], cfg: &GenConfig) -> Vec<f64> {
    let (xs, _, _) = system.scaling();
    let span = times.last().unwrap() - times[0];
    let max_step = span * cfg.step_fraction;
    let (k, mg_gamma) = (cfg.logistic_capacity, cfg.mg_gamma);
    let raw: Vec<f64> = match system {
        System::Logistic => rk4_solve(|_, y, d| d[0] = y[0] * (1.0 - y[0] / k), &[x0], times, max_step)
            .into_iter()
            .map(|v| v[0])
            .collect(),
        System::GeneralOde => rk4_solve(|t, y, d| d[0] = general_ode_rhs(y[0], t), &[x0], times, max_step)
            .into_iter()
            .map(|v| v[0])
            .collect(),
        System::Integro => rk4_solve(
            |_, y, d| {
                d[0] = -2.0 * y[0] - 5.0 * y[1];
                d[1] = y[0];
            },
            &[x0, 0.0],
            times,
            max_step,
        )
        .into_iter()
        .map(|v| v[0])
        .collect(),
        System::Pharmacokinetic => {
            let cent = x0 * PK_V1 / 1000.0;
            let y0 = [PK_DEPOT, 0.0, 0.0, 0.0, cent, PK_V2 / PK_V1 * cent];
            rk4_solve(pk_rhs, &y0, times, max_step)
                .into_iter()
                .map(|v| v[4] * 1000.0 / PK_V1)
                .collect()
        }
        System::MackeyGlass => dde_solve(
            |x, xd| MG_BETA * MG_THETA.powi(MG_N) * xd / (MG_THETA.powi(MG_N) + xd.powi(MG_N)) - mg_gamma * x,
            x0,
            MG_TAU,
            times,
            max_step,
        ),
    };
    raw.into_iter().map(|v| v / xs).collect()
}

/// Six-compartment absorption model; state is
/// `[depot, transit1, transit2, transit3, central, peripheral]` amounts.
pub fn pk_rhs(_t: f64, y: &[f64], d: &mut [f64]) {
    d[0] = -PK_KTR * y[0];
    d[1] = PK_KTR * (y[0] - y[1]);
    d[2] = PK_KTR * (y[1] - y[2]);
    d[3] = PK_KTR * (y[2] - y[3]);
    d[4] = PK_KTR * y[3] - (PK_CL + PK_Q) * y[4] / PK_V1 + PK_Q * y[5] / PK_V2;
    d[5] = PK_Q * y[4] / PK_V1 - PK_Q * y[5] / PK_V2;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub samples: Option<usize>,
    pub noise: f64,
    pub seed: u64,
    /// Observe only `t_0` and 20 points with scaled time in `(1, 2]`.
    pub out_domain: bool,
    pub mg_gamma: f64,
    /// Carrying capacity of the logistic system.
    pub logistic_capacity: f64,
    /// Largest RK4 step as a fraction of the observation span.
    pub step_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            samples: None,
            noise: 0.0,
            seed: 0,
            out_domain: false,
            mg_gamma: MG_GAMMA,
            logistic_capacity: 2.0,
            step_fraction: 2.5e-4,
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Generates the dataset of `system`: equally spaced initial conditions,
/// 20 equally spaced observations, rescaling, then Gaussian noise.
pub fn generate(system: System, cfg: &GenConfig) -> Result<Dataset> {
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::InvalidInput(format!("noise must be >= 0, got {}", cfg.noise)));
    }
    if !(cfg.logistic_capacity > 0.0 && cfg.logistic_capacity.is_finite()) {
        return Err(Error::InvalidInput(format!("logistic capacity must be > 0, got {}", cfg.logistic_capacity)));
    }
    if !(cfg.step_fraction > 0.0 && cfg.step_fraction <= 1e-3) {
        return Err(Error::InvalidInput(format!("step fraction must lie in (0, 1e-3], got {}", cfg.step_fraction)));
    }
    if cfg.out_domain && system != System::Pharmacokinetic {
        return Err(Error::InvalidInput("out-domain observations exist only for the pk system".into()));
    }
    let n = cfg.samples.unwrap_or(system.default_samples());
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let (lo, hi) = system.x0_range();
    let (xs, ts, horizon) = system.scaling();
    let times: Vec<f64> = if cfg.out_domain {
        let mut v = vec![0.0];
        v.extend((1..=20).map(|k| horizon * (1.0 + k as f64 / 20.0)));
        v
    } else {
        linspace(0.0, horizon, 20)
    };
    let samples: Vec<Sample> = linspace(lo, hi, n)
        .into_iter()
        .enumerate()
        .map(|(id, x0)| {
            let values = simulate(system, x0, &times, cfg);
            Sample {
                id,
                x0: x0 / xs,
                times: times.iter().map(|t| t / ts).collect(),
                values,
            }
        })
        .collect();
    let mut parameters = serde_json::Map::new();
    let mut put = |k: &str, v: f64| {
        parameters.insert(k.into(), serde_json::json!(v));
    };
    match system {
        System::Pharmacokinetic => {
            for (k, v) in [("CL", PK_CL), ("V1", PK_V1), ("Q", PK_Q), ("V2", PK_V2), ("ktr", PK_KTR), ("C_depot0", PK_DEPOT)] {
                put(k, v);
            }
        }
        System::MackeyGlass => {
            for (k, v) in [("beta", MG_BETA), ("theta", MG_THETA), ("tau", MG_TAU), ("n", MG_N as f64), ("gamma", cfg.mg_gamma)] {
                put(k, v);
            }
        }
        System::Logistic => put("K", cfg.logistic_capacity),
        _ => {}
    }
    if cfg.out_domain {
        parameters.insert("out_domain".into(), serde_json::json!(true));
    }
    let ds = Dataset {
        samples,
        meta: DatasetMeta {
            system: system.name().into(),
            noise: 0.0,
            seed: cfg.seed,
            x_scale: xs,
            t_scale: ts,
            parameters,
        },
    };
    Ok(add_noise(&ds, cfg.noise, cfg.seed))
}

/// Adds independent Gaussian noise; each sample draws from its own stream.
pub fn add_noise(ds: &Dataset, sigma: f64, seed: u64) -> Dataset {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut out = ds.clone();
    out.meta.noise = (ds.meta.noise.powi(2) + sigma * sigma).sqrt();
    if sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for s in &mut out.samples {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s.id as u64 + 1);
        for v in &mut s.values {
            *v += normal.sample(&mut rng);
        }
    }
    out
}

/// Random split into train/validation/test by `ratios`.
pub fn split(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("split ratios {ratios:?} must be >= 0 and sum to 1")));
    }
    let n = ds.samples.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut parts = [
        idx[..n_train].to_vec(),
        idx[n_train..n_train + n_val].to_vec(),
        idx[n_train + n_val..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((ds.subset(&parts[0]), ds.subset(&parts[1]), ds.subset(&parts[2])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(system: System, n: usize) -> Dataset {
        generate(system, &GenConfig { samples: Some(n), ..Default::default() }).unwrap()
    }

    fn coarse() -> GenConfig {
        GenConfig { step_fraction: 1e-3, ..Default::default() }
    }

    #[test]
    fn logistic_matches_closed_form() {
        let times = linspace(0.0, 5.0, 20);
        let at_two = simulate(System::Logistic, 2.0, &times, &coarse());
        assert!(at_two.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let one = simulate(System::Logistic, 1.0, &times, &coarse());
        let exact = 2.0 / (1.0 + (-5.0f64).exp());
        assert!((one[19] - exact).abs() < 1e-10);
        assert!((exact - 1.9866).abs() < 1e-4);
        let low = simulate(System::Logistic, 0.2, &times, &coarse());
        assert!(low.windows(2).all(|w| w[1] > w[0]));
        let ds = noiseless(System::Logistic, 200);
        assert_eq!(ds.n_observations(), 4000);
        let k = GenConfig { logistic_capacity: 2.8, ..coarse() };
        let v = simulate(System::Logistic, 1.0, &times, &k);
        let exact = 2.8 / (1.0 + 1.8 * (-5.0f64).exp());
        assert!((v[19] - exact).abs() < 1e-10);
        let ds = generate(System::Logistic, &GenConfig { samples: Some(3), ..k }).unwrap();
        assert_eq!(ds.meta.parameters["K"], 2.8);
        assert!(generate(System::Logistic, &GenConfig { logistic_capacity: 0.0, ..k }).is_err());
    }

    #[test]
    fn pk_shape_and_linearity() {
        let times = linspace(0.0, 24.0, 200);
        let v = simulate(System::Pharmacokinetic, 0.0, &times, &coarse());
        assert_eq!(v[0], 0.0);
        let peak = v.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 0.0 && v[199] < 0.5 * peak && v[199] > 0.0);
        let (t, x) = (times.iter().map(|t| t / 24.0).collect::<Vec<_>>(), v.clone());
        let e = crate::semantics::extract_semantics(&t, &x, None).unwrap();
        let codes: Vec<String> = e.motifs.iter().map(|m| m.to_string()).collect();
        assert_eq!(codes[..3], ["++b", "+-b", "--b"]);
        // the system is linear: doubling the dose doubles the response
        let y0 = [2.0 * PK_DEPOT, 0.0, 0.0, 0.0, 0.0, 0.0];
        let doubled = rk4_solve(pk_rhs, &y0, &times, 24e-3);
        for (a, b) in v.iter().zip(&doubled) {
            assert!((2.0 * a - b[4] * 1000.0 / PK_V1 / 20.0).abs() < 1e-12);
        }
        let ds = noiseless(System::Pharmacokinetic, 100);
        assert_eq!(ds.meta.parameters["CL"], 80.247);
        let out = generate(System::Pharmacokinetic, &GenConfig { out_domain: true, ..Default::default() }).unwrap();
        let ts = &out.samples[0].times;
        assert_eq!(ts.len(), 21);
        assert_eq!(ts[0], 0.0);
        assert!(ts[1] > 1.0 && (ts[20] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn general_ode_density() {
        let pdf = |x: f64, t: f64, m: [f64; 2], v: f64| {
            (-((x - m[0]).powi(2) + (t - m[1]).powi(2)) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v)
        };
        let expect = 50.0 * (0.4 * pdf(0.0, 0.0, [0.0, 0.0], 1.0) - 0.3 * pdf(0.0, 0.0, [3.0, 3.0], 1.0) + 0.3 * pdf(0.0, 0.0, [-1.0, -2.0], 2.0));
        assert!((general_ode_rhs(0.0, 0.0) - expect).abs() < 1e-12);
        assert!(general_ode_rhs(50.0, 1.0).abs() < 1e-250);
        let a = generate(System::GeneralOde, &GenConfig { samples: Some(5), ..Default::default() }).unwrap();
        let b = generate(System::GeneralOde, &GenConfig { samples: Some(5), ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mackey_glass_equilibrium_and_history() {
        let times = linspace(0.0, 30.0, 20);
        let eq = simulate(System::MackeyGlass, 1.0, &times, &coarse());
        assert!(eq.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        // before tau the delayed term is the constant history: x' = 0.4 x0/(1+x0^4) - 0.2 x
        let x0: f64 = 2.0;
        let short = dde_solve(
            |x, xd| MG_BETA * xd / (1.0 + xd.powi(4)) - MG_GAMMA * x,
            x0,
            MG_TAU,
            &[0.0, 3.0],
            0.01,
        );
        let c = MG_BETA * x0 / (1.0 + x0.powi(4));
        let exact = c / MG_GAMMA + (x0 - c / MG_GAMMA) * (-MG_GAMMA * 3.0).exp();
        assert!((short[1] - exact).abs() < 1e-9);
    }

    #[test]
    fn integro_matches_quadrature_and_closed_form() {
        let times = linspace(0.0, 5.0, 20);
        let x0 = 1.0;
        let v = simulate(System::Integro, x0, &times, &coarse());
        assert!(simulate(System::Integro, 0.0, &times, &coarse()).iter().all(|&x| x == 0.0));
        // x'' = -2x' - 5x with x'(0) = -2 x0
        for (&t, &x) in times.iter().zip(&v) {
            let exact = (-t).exp() * (x0 * (2.0 * t).cos() - 0.5 * x0 * (2.0 * t).sin());
            assert!((x - exact).abs() < 1e-9);
        }
        // direct solver: Heun steps with the integral accumulated by the trapezoid rule
        let (mut x, mut integral) = (x0, 0.0);
        for k in 1..times.len() {
            let n = 4000;
            let h = (times[k] - times[k - 1]) / n as f64;
            for _ in 0..n {
                let f0 = -2.0 * x - 5.0 * integral;
                let xp = x + h * f0;
                let ip = integral + 0.5 * h * (x + xp);
                let f1 = -2.0 * xp - 5.0 * ip;
                let xn = x + 0.5 * h * (f0 + f1);
                integral += 0.5 * h * (x + xn);
                x = xn;
            }
            assert!((x - v[k]).abs() < 1e-6, "{}: {x} vs {}", times[k], v[k]);
        }
    }

    #[test]
    fn step_halving_converges() {
        for system in System::ALL {
            let (lo, hi) = system.x0_range();
            let (_, _, horizon) = system.scaling();
            let times = linspace(0.0, horizon, 20);
            for x0 in [lo, 0.5 * (lo + hi), hi] {
                let step = GenConfig::default().step_fraction;
                let a = simulate(system, x0, &times, &GenConfig { step_fraction: step, ..Default::default() });
                let b = simulate(system, x0, &times, &GenConfig { step_fraction: 0.5 * step, ..Default::default() });
                for (u, w) in a.iter().zip(&b) {
                    assert!((u - w).abs() < 1e-8, "{system} x0={x0}: {u} vs {w}");
                }
            }
        }
    }

    #[test]
    fn noise_and_split() {
        let ds = noiseless(System::Integro, 100);
        assert_eq!(add_noise(&ds, 0.0, 3).samples, ds.samples);
        let big = Dataset {
            samples: vec![Sample { id: 0, x0: 0.0, times: (0..100_000).map(|i| i as f64).collect(), values: vec![0.0; 100_000] }],
            meta: ds.meta.clone(),
        };
        let noisy = add_noise(&big, 0.2, 11);
        let v = &noisy.samples[0].values;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd / 0.2 - 1.0).abs() < 0.02);
        let (a, b, c) = split(&ds, [0.7, 0.15, 0.15], 4).unwrap();
        assert_eq!((a.samples.len(), b.samples.len(), c.samples.len()), (70, 15, 15));
        let mut ids: Vec<usize> = a.samples.iter().chain(&b.samples).chain(&c.samples).map(|s| s.id).collect();
        ids.sort();
        assert_eq!(ids, (0..100).collect::<Vec<_>>());
        let again = generate(System::Integro, &GenConfig { noise: 0.01, seed: 5, ..Default::default() }).unwrap();
        assert_eq!(again, generate(System::Integro, &GenConfig { noise: 0.01, seed: 5, ..Default::default() }).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate(System::Pharmacokinetic, &GenConfig { samples: Some(4), noise: 0.01, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pk.csv");
        ds.save(&path).unwrap();
        assert!(dir.path().join("pk.meta.json").exists());
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,x0,t,y\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 20);
        let bad = "sample_id,x0,t,y\n0,1.0,0.0,abc\n";
        let err = Dataset::read_csv(bad.as_bytes(), ds.meta.clone()).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }
}
