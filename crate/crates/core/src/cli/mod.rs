//! The `mfmap` command line: simulate, train, score, sample, benchmark.

pub mod benchmark;

pub use benchmark::{render_svg, run_benchmark, BenchmarkRow, BenchmarkSetup};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::Value;

use crate::baselines::fit_independent_gaussian;
use crate::checkpoint::{Checkpoint, DataPaths};
use crate::error::{Error, Result};
use crate::model::{CorrelationFamily, ModelKind, ModelSpec};
use crate::predict::{log_score, sample_conditional, sample_joint, LogScore};
use crate::simdata::{gen_scenario, GeneratorSpec, Scenario};
use crate::spatial::{load_ensemble, load_locations, write_ensemble, write_locations, Ensemble, MultiFidelityLocations};
use crate::train::{fit, TrainConfig, TrainedMap};

#[derive(Debug, Parser)]
#[command(name = "mfmap", version, about = "Transport-map density estimation for multi-resolution spatial ensembles")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MFMAP_THREADS")]
    pub threads: Option<usize>,

    /// JSON file whose keys mirror long flag names; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario with train/test ensembles and truth scores.
    Simulate(SimulateArgs),
    /// Fit a model and write a checkpoint, objective trace and ordering.
    Train(TrainArgs),
    /// Negative log scores of a test ensemble under a checkpoint.
    Score(ScoreArgs),
    /// Draw joint or conditional samples from a checkpoint.
    Sample(SampleArgs),
    /// Train and score all models over several ensemble sizes and seeds.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Scenario,
    /// Grid side lengths per fidelity, coarse to fine.
    #[arg(long, value_delimiter = ',')]
    pub grids: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.3)]
    pub range: f64,
    #[arg(long, default_value_t = 2.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 4.0)]
    pub frequency: f64,
}

impl GeneratorArgs {
    fn spec(&self, seed: u64) -> GeneratorSpec {
        let mut spec = GeneratorSpec::new(self.scenario, seed);
        if let Some(g) = &self.grids {
            spec.grids = g.clone();
        }
        spec.range = self.range;
        spec.amplitude = self.amplitude;
        spec.frequency = self.frequency;
        spec
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = 50)]
    pub n_train: usize,
    #[arg(long, default_value_t = 50)]
    pub n_test: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "mfbtm", value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    /// Relative improvement threshold for early stopping.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub no_early_stop: bool,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 4.0)]
    pub g: f64,
    #[arg(long, default_value = "matern32", value_parser = parse_rho)]
    pub rho: CorrelationFamily,
    #[arg(long, default_value_t = 30)]
    pub m_max: usize,
    #[arg(long, default_value_t = 30)]
    pub mp_max: usize,
}

impl ModelArgs {
    fn spec(&self) -> ModelSpec {
        ModelSpec {
            g: self.g,
            epsilon: self.epsilon,
            rho: self.rho,
            m_max: self.m_max,
            mp_max: self.mp_max,
            nonlinear: self.model != ModelKind::Linear,
        }
    }

    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs as usize,
            batch_size: self.batch_size as usize,
            learning_rate: self.learning_rate,
            seed,
            tolerance: (!self.no_early_stop).then_some(self.tolerance),
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory in the layout written by `simulate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub locations: Option<PathBuf>,
    /// Training ensemble files, one per fidelity.
    #[arg(long, value_delimiter = ',')]
    pub train: Option<Vec<PathBuf>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Test ensemble files, one per fidelity.
    #[arg(long, value_delimiter = ',')]
    pub test: Option<Vec<PathBuf>>,
    /// Score CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    /// Condition on fidelities 1..=r0 ...
    #[arg(long, requires = "given_file")]
    pub given_fidelities: Option<usize>,
    /// ... whose values are read from these files, one per fidelity.
    #[arg(long, value_delimiter = ',', requires = "given_fidelities")]
    pub given_file: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, value_delimiter = ',', default_value = "10,25,50")]
    pub n_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 50)]
    pub n_test: usize,
    #[arg(long, value_delimiter = ',', default_value = "mfbtm,linear,indep", value_parser = parse_model)]
    pub models: Vec<ModelKind>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rho(s: &str) -> std::result::Result<CorrelationFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Appends flags from a `--config` JSON object that are not already given.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (k, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(k + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let Value::Object(map) = serde_json::from_str::<Value>(&text)? else {
        return Err(Error::InvalidArgument(format!("{} must hold a JSON object", path.display())));
    };
    let given: Vec<String> = args
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap().to_string())
        .collect();
    let mut out = args;
    for (key, value) in map {
        let flag = key.replace('_', "-");
        if flag == "config" || given.contains(&flag) {
            continue;
        }
        let text = |v: &Value| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(Error::InvalidArgument(format!("unsupported value {other} for config key {key}"))),
        };
        match &value {
            Value::Bool(true) => out.push(format!("--{flag}").into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let joined = items.iter().map(text).collect::<Result<Vec<_>>>()?.join(",");
                out.push(format!("--{flag}").into());
                out.push(joined.into());
            }
            v => {
                out.push(format!("--{flag}").into());
                out.push(text(v)?.into());
            }
        }
    }
    Ok(out)
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| run(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Sample(a) => sample(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn fidelity_files(dir: &Path, prefix: &str, nfid: usize) -> Vec<PathBuf> {
    (1..=nfid).map(|r| dir.join(format!("{prefix}_f{r}.csv"))).collect()
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec = a.generator.spec(a.seed);
    let data = gen_scenario(&spec, a.n_train, a.n_test)?;
    create_dir(&a.out)?;
    let nfid = data.locations.num_fidelities();
    write_locations(a.out.join("locations.csv"), &data.locations)?;
    write_ensemble(&fidelity_files(&a.out, "train", nfid), &data.train)?;
    write_ensemble(&fidelity_files(&a.out, "test", nfid), &data.test)?;
    let mut truth = String::from("replicate,neg_log_density\n");
    for (j, s) in data.truth.scores(&data.test).iter().enumerate() {
        truth.push_str(&format!("{},{}\n", j + 1, s));
    }
    let path = a.out.join("truth_scores.csv");
    fs::write(&path, truth).map_err(|e| Error::io(&path, e))?;
    let provenance = serde_json::json!({
        "generator": spec,
        "n_train": a.n_train,
        "n_test": a.n_test,
        "centers": data.centers,
        "sizes": data.locations.sizes(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    let path = a.out.join("provenance.json");
    fs::write(&path, serde_json::to_string_pretty(&provenance)? + "\n").map_err(|e| Error::io(&path, e))?;
    info!("wrote scenario {} to {}", spec.scenario.name(), a.out.display());
    Ok(())
}

fn absolute(p: &Path) -> String {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

/// Resolves the locations and training files from flags or a data directory.
fn training_paths(d: &DataArgs, fallback: Option<&DataPaths>) -> Result<(PathBuf, Vec<PathBuf>)> {
    let locations = d
        .locations
        .clone()
        .or_else(|| d.data.as_ref().map(|dir| dir.join("locations.csv")))
        .or_else(|| fallback.map(|p| PathBuf::from(&p.locations)))
        .ok_or_else(|| Error::InvalidArgument("no locations file given (use --data or --locations)".into()))?;
    let train = match (&d.train, &d.data, fallback) {
        (Some(t), _, _) => t.clone(),
        (None, Some(dir), _) => {
            let nfid = load_locations(&locations)?.num_fidelities();
            fidelity_files(dir, "train", nfid)
        }
        (None, None, Some(p)) => p.train.iter().map(PathBuf::from).collect(),
        _ => return Err(Error::InvalidArgument("no training files given (use --data or --train)".into())),
    };
    Ok((locations, train))
}

fn load_training(d: &DataArgs, fallback: Option<&DataPaths>) -> Result<(MultiFidelityLocations, Ensemble, DataPaths)> {
    let (lp, tp) = training_paths(d, fallback)?;
    let locs = load_locations(&lp)?;
    let ens = load_ensemble(&tp, &locs)?;
    let paths = DataPaths { locations: absolute(&lp), train: tp.iter().map(|p| absolute(p)).collect() };
    Ok((locs, ens, paths))
}

fn train(a: &TrainArgs) -> Result<()> {
    let (locs, ens, paths) = load_training(&a.data, None)?;
    create_dir(&a.out)?;
    let ck = match a.model.model {
        ModelKind::Indep => {
            fit_independent_gaussian(&ens)?;
            Checkpoint::independent(locs.num_fidelities(), Some(paths))
        }
        kind => {
            let map = fit(&ens, &locs, &a.model.spec(), &a.model.config(a.seed))?;
            map.report.as_ref().expect("fit records a report").write_trace_csv(a.out.join("trace.csv"))?;
            map.ordering.write_csv(a.out.join("ordering.csv"))?;
            Checkpoint::from_map(&map, kind, Some(paths))
        }
    };
    ck.save(a.out.join("checkpoint.json"))
}

enum Loaded {
    Map(Box<TrainedMap>),
    Indep(crate::baselines::IndependentGaussian),
}

fn load_model(path: &Path, d: &DataArgs) -> Result<(Loaded, MultiFidelityLocations)> {
    let ck = Checkpoint::load(path)?;
    let (locs, ens, _) = load_training(d, ck.data_paths())?;
    if locs.num_fidelities() != ck.num_fidelities {
        return Err(Error::InvalidArgument(format!(
            "checkpoint has {} fidelities, data has {}",
            ck.num_fidelities,
            locs.num_fidelities()
        )));
    }
    let model = match ck.model {
        ModelKind::Indep => Loaded::Indep(fit_independent_gaussian(&ens)?),
        _ => Loaded::Map(Box::new(TrainedMap::from_params(ck.hyperparams()?, ck.spec(), &locs, &ens)?)),
    };
    Ok((model, locs))
}

fn score(a: &ScoreArgs) -> Result<()> {
    let (model, locs) = load_model(&a.checkpoint, &a.data)?;
    let files = match (&a.test, &a.data.data) {
        (Some(t), _) => t.clone(),
        (None, Some(dir)) => fidelity_files(dir, "test", locs.num_fidelities()),
        _ => return Err(Error::InvalidArgument("no test files given (use --test or --data)".into())),
    };
    let test = load_ensemble(&files, &locs)?;
    let s: LogScore = match &model {
        Loaded::Map(m) => log_score(m.as_ref(), &test)?,
        Loaded::Indep(m) => log_score(m, &test)?,
    };
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    s.write_csv(&a.out)?;
    println!("mean negative log score: {}", s.mean);
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let (model, locs) = load_model(&a.checkpoint, &a.data)?;
    let Loaded::Map(map) = model else {
        return Err(Error::InvalidArgument("sampling needs a transport-map checkpoint".into()));
    };
    let draws = match (a.given_fidelities, &a.given_file) {
        (Some(r0), Some(files)) => {
            if r0 > locs.num_fidelities() {
                return Err(Error::InvalidArgument(format!("--given-fidelities {r0} exceeds {}", locs.num_fidelities())));
            }
            if files.len() != r0 {
                return Err(Error::InvalidArgument(format!("expected {r0} given files, got {}", files.len())));
            }
            let lower = MultiFidelityLocations::from_flat(
                locs.dim(),
                (0..r0).map(|r| locs.flat(r).to_vec()).collect(),
            )?;
            let given = if r0 == 0 { Ensemble::new(0, vec![], vec![])? } else { load_ensemble(files, &lower)? };
            sample_conditional(&map, &given, a.count, a.seed)?
        }
        _ => sample_joint(&map, a.count, a.seed)?,
    };
    create_dir(&a.out)?;
    write_ensemble(&fidelity_files(&a.out, "sample", locs.num_fidelities()), &draws)
}

fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    let setup = BenchmarkSetup {
        generator: a.generator.spec(0),
        n_list: a.n_list.clone(),
        seeds: a.seeds.clone(),
        n_test: a.n_test,
        models: a.models.clone(),
        spec: a.model.spec(),
        config: a.model.config(0),
    };
    let rows = run_benchmark(&setup)?;
    create_dir(&a.out)?;
    let mut csv = String::from("scenario,model,n,seed,mean_neg_log_score\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.scenario, r.model, r.n, r.seed, r.score));
    }
    let path = a.out.join("benchmark.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let path = a.out.join("benchmark.svg");
    fs::write(&path, render_svg(&rows)).map_err(|e| Error::io(&path, e))
}
