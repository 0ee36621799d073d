//! Subcommands of the `semode` binary.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use semode_core::datasets::generate;
use semode_core::{
    apply_edits, fit_model, run_benchmark, BenchConfig, Dataset, EditSpec, GenConfig, LibraryFilter, ModelConfig,
    Motif, SemanticModel, System, TrajectoryMode,
};

use crate::server::{serve, ServeConfig, Session};

#[derive(Debug, Parser)]
#[command(name = "semode", version, about = "Semantic modeling of one-dimensional dynamical systems")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Fit a model to a CSV dataset.
    Fit(FitArgs),
    /// Predict one trajectory.
    Predict(PredictArgs),
    /// Print the semantic representation: branches and property curves.
    Inspect(InspectArgs),
    /// Apply an edit spec and refit on data.
    Edit(EditArgs),
    /// Run the evaluation protocol on a synthetic system.
    Bench(BenchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub system: System,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of trajectories (system default when omitted).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Observe scaled times in (1, 2] instead (pk only).
    #[arg(long)]
    pub out_domain: bool,
    #[arg(long)]
    pub mg_gamma: Option<f64>,
    #[arg(long)]
    pub logistic_capacity: Option<f64>,
    /// CSV path; a `.meta.json` sidecar is written next to it. Stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    pub max_motifs: usize,
    /// Largest number of composition-map branches.
    #[arg(long, default_value_t = 3)]
    pub branches: usize,
    /// `last=-+h;first=+-b;forbid=++u,--u` or the JSON form.
    #[arg(long, value_parser = parse_filter)]
    pub library_filter: Option<LibraryFilter>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub end_penalty: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        let mut cfg = ModelConfig {
            max_motifs: self.max_motifs,
            max_branches: self.branches,
            library_filter: self.library_filter.clone().unwrap_or_default(),
            ..Default::default()
        };
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.end_penalty {
            cfg.train.end_penalty = v;
        }
        if let Some(v) = self.max_iter {
            cfg.train.max_iter = v;
        }
        cfg.train.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Model JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: f64,
    /// Number of equally spaced output times.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    /// Last output time (training horizon when omitted).
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::C2)]
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    C0,
    C2,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub model: PathBuf,
    /// x₀ values sampled per branch.
    #[arg(long, default_value_t = 200)]
    pub x0_grid: usize,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub edit: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Retrain from fresh per-sample fits instead of the current weights.
    #[arg(long)]
    pub from_scratch: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Md,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub system: System,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Seed count, or a comma-separated list of seeds.
    #[arg(long, default_value = "5", value_parser = parse_seeds)]
    pub seeds: Seeds,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_motifs: Option<usize>,
    #[arg(long, value_parser = parse_filter)]
    pub library_filter: Option<LibraryFilter>,
    /// Also score observations after scaled time 1 (pk only).
    #[arg(long)]
    pub out_domain: bool,
    /// Edit spec applied to every final model before scoring again.
    #[arg(long)]
    pub edit: Option<PathBuf>,
    #[arg(long)]
    pub mg_gamma: Option<f64>,
    #[arg(long)]
    pub logistic_capacity: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Md)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Dataset used for refits.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Held-out dataset scored before and after every edit.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Directory of the UI bundle served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad invocation: exit code 1.
    Usage(String),
    /// The command ran and failed: exit code 2.
    Runtime(String),
}

impl From<semode_core::Error> for Failure {
    fn from(e: semode_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn parse_filter(s: &str) -> Result<LibraryFilter, String> {
    let s = s.trim();
    if s.starts_with('{') {
        return serde_json::from_str(s).map_err(|e| e.to_string());
    }
    let mut f = LibraryFilter::default();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got `{part}`"))?;
        let motif = |v: &str| v.trim().parse::<Motif>().map_err(|e| e.to_string());
        match key.trim() {
            "first" => f.first = Some(motif(value)?),
            "last" => f.last = Some(motif(value)?),
            "forbid" => {
                for v in value.split(',') {
                    f.forbidden.push(motif(v)?);
                }
            }
            other => return Err(format!("unknown filter key `{other}` (first, last, forbid)")),
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seeds(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    if s.contains(',') {
        let v: Result<Vec<u64>, String> =
            s.split(',').map(|v| v.trim().parse::<u64>().map_err(|e| format!("seed `{v}`: {e}"))).collect();
        v.map(Seeds)
    } else {
        let n: u64 = s.parse().map_err(|e| format!("seed count `{s}`: {e}"))?;
        if n == 0 {
            return Err("need at least one seed".into());
        }
        Ok(Seeds((0..n).collect()))
    }
}

fn existing(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn load_model(path: &Path) -> Result<SemanticModel, Failure> {
    existing(path, "model file")?;
    SemanticModel::load(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    existing(path, "dataset")?;
    Dataset::load(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_edits(path: &Path) -> Result<EditSpec, Failure> {
    existing(path, "edit file")?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(e.to_string()))?;
    EditSpec::from_json(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| if text.ends_with('\n') { Ok(()) } else { stdout.write_all(b"\n") })
                .map_err(|e| Failure::Runtime(e.to_string()))
        }
    }
}

fn json_text<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let d = GenConfig::default();
    let cfg = GenConfig {
        samples: a.samples,
        noise: a.noise,
        seed: a.seed,
        out_domain: a.out_domain,
        mg_gamma: a.mg_gamma.unwrap_or(d.mg_gamma),
        logistic_capacity: a.logistic_capacity.unwrap_or(d.logistic_capacity),
        ..d
    };
    let ds = generate(a.system, &cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    match a.out {
        Some(p) => ds.save(&p)?,
        None => ds.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<(), Failure> {
    let data = load_data(&a.data)?;
    let out = fit_model(&data.samples, &a.model.config())?;
    let m = &out.model;
    eprintln!(
        "fitted {} branch(es): {}",
        m.composition_map.n_branches(),
        m.composition_map.compositions().iter().map(|c| format!("({c})")).collect::<Vec<_>>().join(" ")
    );
    emit(a.out.as_deref(), &m.to_json()?)
}

fn cmd_predict(a: PredictArgs) -> Result<(), Failure> {
    if a.grid < 2 {
        return Err(Failure::Usage("--grid must be at least 2".into()));
    }
    if !a.x0.is_finite() {
        return Err(Failure::Usage("--x0 must be finite".into()));
    }
    let m = load_model(&a.model)?;
    let t0 = m.ranges.t0;
    let t_max = a.t_max.unwrap_or(m.ranges.t_max);
    if !(t_max > t0) {
        return Err(Failure::Usage(format!("--t-max must exceed {t0}")));
    }
    let mode = match a.mode {
        Mode::C0 => TrajectoryMode::TrainC0,
        Mode::C2 => TrajectoryMode::InferC2,
    };
    let tr = m.predict_trajectory(a.x0, mode)?;
    let times: Vec<f64> = (0..a.grid).map(|i| t0 + (t_max - t0) * i as f64 / (a.grid - 1) as f64).collect();
    let body = json!({
        "x0": a.x0,
        "semantics": tr.semantics,
        "c2_status": tr.c2_status,
        "times": times,
        "values": tr.values(&times),
    });
    emit(None, &json_text(&body)?)
}

fn cmd_inspect(a: InspectArgs) -> Result<(), Failure> {
    if a.x0_grid == 0 {
        return Err(Failure::Usage("--x0-grid must be at least 1".into()));
    }
    let m = load_model(&a.model)?;
    emit(None, &json_text(&m.inspect(a.x0_grid)?)?)
}

fn cmd_edit(a: EditArgs) -> Result<(), Failure> {
    let m = load_model(&a.model)?;
    let mut spec = load_edits(&a.edit)?;
    let data = load_data(&a.data)?;
    spec.from_scratch |= a.from_scratch;
    let edited = apply_edits(&m, &spec, &data.samples, None)?;
    emit(a.out.as_deref(), &edited.to_json()?)
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let mut cfg = BenchConfig::new(a.system, a.noise);
    cfg.seeds = a.seeds.0;
    cfg.trials = a.trials;
    cfg.samples = a.samples;
    cfg.out_domain = a.out_domain;
    if let Some(k) = a.max_motifs {
        cfg.model.max_motifs = k;
    }
    if let Some(f) = a.library_filter {
        cfg.model.library_filter = f;
    }
    if let Some(v) = a.mg_gamma {
        cfg.mg_gamma = v;
    }
    if let Some(v) = a.logistic_capacity {
        cfg.logistic_capacity = v;
    }
    if let Some(p) = &a.edit {
        cfg.edit = Some(load_edits(p)?);
    }
    cfg.check().map_err(|e| Failure::Usage(e.to_string()))?;
    let start = std::time::Instant::now();
    let report = run_benchmark(&cfg)?;
    eprintln!(
        "{} seed(s) in {:.1} s, {} failed",
        report.seeds.len(),
        start.elapsed().as_secs_f64(),
        report.n_failed()
    );
    let text = match a.format {
        Format::Md => report.to_markdown(),
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json()?,
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let model = a.model.as_deref().map(load_model).transpose()?;
    let data = a.data.as_deref().map(load_data).transpose()?;
    let test = a.test_data.as_deref().map(load_data).transpose()?;
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(Failure::Usage(format!("static directory `{}` does not exist", dir.display())));
        }
    }
    let session = Session::new(model, data, test);
    let cfg = ServeConfig {
        addr: SocketAddr::new(a.host, a.port),
        static_dir: a.static_dir,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(serve(session, cfg)).map_err(|e| Failure::Runtime(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_syntax() {
        let f = parse_filter("last=-+h; forbid=++u,--u").unwrap();
        assert_eq!(f.last, Some(Motif::DecConvexH));
        assert_eq!(f.forbidden.len(), 2);
        let j = parse_filter(r#"{"last":"-+h"}"#).unwrap();
        assert_eq!(j.last, f.last);
        assert!(parse_filter("final=-+h").unwrap_err().contains("unknown filter key"));
        assert!(parse_filter("last").is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3").unwrap(), Seeds(vec![0, 1, 2]));
        assert_eq!(parse_seeds("4, 7").unwrap(), Seeds(vec![4, 7]));
        assert!(parse_seeds("0").is_err());
    }
}
