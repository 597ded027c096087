//! Command-line front end. [`dispatch`] parses arguments, runs one
//! subcommand inside a sized worker pool and writes a [`RunManifest`] next to
//! the primary output so the run can be replayed.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

pub mod io;
mod manifest;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bench::{kernel_sweep, run_roc_study, run_roc_study_permutation, Scenario, ScenarioSampler, ScenarioSpec};
use crate::discrepancy::{energy_weighted, mmd2_empirical, mmd2_weighted};
use crate::dp::{
    resolve_terms, sample_dp_posterior, sample_dp_prior, sample_stick_breaking, DPParams, DiscreteMeasure,
    PosteriorParams, Sampler, SmoothedEmpiricalSampler, Truncation, DEFAULT_MAX_TERMS,
};
use crate::error::{Error, Result};
use crate::gan::{data::eight_gaussians, data::uniform_baseline, mmds_score, train, GeneratorNet, TrainConfig};
use crate::kernels::{Family, KernelChoice, KernelSpec};
use crate::rb::{run_gof_test, RBConfig};
use crate::stream::{seeded, substream};

use io::{fmt_num, read_csv, read_matrix, write_file};
pub use manifest::{manifest_path, RunManifest};

/// Seed used when neither `--seed` nor the environment variable is set.
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const SEED_ENV: &str = "BNPMMD_SEED";

#[derive(Debug, Parser)]
#[command(name = "bnpmmd", version, about = "Semi-BNP MMD estimation, goodness-of-fit testing and generator training")]
struct Cli {
    /// Worker threads for replication loops (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Relative-belief goodness-of-fit test of a data set against a model.
    GofTest(GofArgs),
    /// ROC curve of the test over replicated scenario samples.
    Roc(RocArgs),
    /// MMD² (or energy distance) between two CSV matrices.
    Mmd(MmdArgs),
    /// Draw a finite Dirichlet-process prior or posterior measure.
    DpSample(DpSampleArgs),
    /// Train a generator network against the posterior MMD.
    GanTrain(GanTrainArgs),
    /// MMDS matching score of a trained generator.
    GanScore(GanScoreArgs),
    /// AUC of the test for a range of Gaussian bandwidths.
    BandwidthSweep(SweepArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GofTest(_) => "gof-test",
            Command::Roc(_) => "roc",
            Command::Mmd(_) => "mmd",
            Command::DpSample(_) => "dp-sample",
            Command::GanTrain(_) => "gan-train",
            Command::GanScore(_) => "gan-score",
            Command::BandwidthSweep(_) => "bandwidth-sweep",
            Command::Replay(_) => "replay",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::GofTest(a) => Some(a.seed),
            Command::Roc(a) => Some(a.seed),
            Command::DpSample(a) => Some(a.seed),
            Command::GanTrain(a) => Some(a.seed),
            Command::GanScore(a) => Some(a.seed),
            Command::BandwidthSweep(a) => Some(a.seed),
            Command::Mmd(_) | Command::Replay(_) => None,
        }
    }
}

/// Settings shared by every relative-belief run.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RbArgs {
    /// Prior concentration a [default: n/2].
    #[arg(long = "a")]
    pub a: Option<f64>,
    /// Monte Carlo replications ℓ for each of prior and posterior.
    #[arg(long, default_value_t = 1000)]
    pub ell: usize,
    /// Number of grid cells M.
    #[arg(long = "M", default_value_t = 20)]
    pub grid_m: usize,
    #[arg(long, default_value_t = 1)]
    pub i0: usize,
    /// Stopping-rule tolerance ε.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Fixed number of DP terms N (overrides --eps).
    #[arg(long)]
    pub n_terms: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_TERMS)]
    pub max_terms: usize,
    /// Model sample size m [default: n].
    #[arg(long)]
    pub m: Option<usize>,
    /// Hold one model sample fixed across all replications instead of
    /// drawing a fresh one each time.
    #[arg(long)]
    pub fixed_model: bool,
}

impl RbArgs {
    fn config(&self, kernel: KernelChoice, n: usize) -> Result<RBConfig> {
        let mut c = RBConfig::new(self.a.unwrap_or(n as f64 / 2.0), kernel);
        c.truncation = truncation(self.n_terms, self.eps);
        c.max_terms = self.max_terms;
        c.mc_reps = self.ell;
        c.grid_m = self.grid_m;
        c.grid_i0 = self.i0;
        c.model_size = self.m;
        c.resample_model_per_rep = !self.fixed_model;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GofArgs {
    /// Observed sample (CSV or IDX).
    #[arg(long)]
    pub data: PathBuf,
    /// Skip one header line in CSV input.
    #[arg(long)]
    pub header: bool,
    /// Scenario name (the model is that distribution) or a generator JSON file.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value = "gaussian:80")]
    pub kernel: KernelChoice,
    #[command(flatten)]
    pub rb: RbArgs,
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of the simulated prior and posterior MMD² values (two columns).
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RocMethod {
    /// Relative-belief ratio, thresholds on [0, M/i0].
    Rb,
    /// Permutation p-value of the empirical MMD², thresholds on [0, 1].
    Permutation,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RocArgs {
    #[arg(long)]
    pub null: Scenario,
    #[arg(long)]
    pub alt: Scenario,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub n: usize,
    /// Replications per hypothesis.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value = "gaussian:80")]
    pub kernel: KernelChoice,
    #[command(flatten)]
    pub rb: RbArgs,
    #[arg(long, value_enum, default_value_t = RocMethod::Rb)]
    pub method: RocMethod,
    #[arg(long, default_value_t = 200)]
    pub perms: usize,
    /// Number of evenly spaced thresholds.
    #[arg(long, default_value_t = crate::bench::DEFAULT_THRESHOLDS)]
    pub thresholds: usize,
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// CSV with columns threshold, fpr, tpr.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Full curve with counts and raw scores.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MmdArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value = "gaussian:median")]
    pub kernel: KernelChoice,
    /// One-column CSV of weights on the rows of x (weighted estimator).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Energy distance instead of MMD² (the kernel is ignored).
    #[arg(long)]
    pub energy: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpMethod {
    /// Finite Dirichlet(a/N) approximation.
    Ishwaran,
    /// Truncated stick-breaking with --n-terms sticks (prior only).
    StickBreaking,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DpSampleArgs {
    /// Concentration a.
    #[arg(long = "a")]
    pub a: f64,
    /// Base measure as a scenario distribution [default: no_difference].
    #[arg(long)]
    pub base: Option<Scenario>,
    /// Dimension of the base measure when sampling the prior.
    #[arg(long)]
    pub d: Option<usize>,
    /// Observed sample; when given, draws from the posterior.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long)]
    pub n_terms: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_TERMS)]
    pub max_terms: usize,
    #[arg(long, value_enum, default_value_t = DpMethod::Ishwaran)]
    pub method: DpMethod,
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// CSV with columns weight, atom coordinates [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Toy {
    /// Eight Gaussians on a ring inside the unit square.
    Ring,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GanTrainArgs {
    /// Training data (CSV or IDX), values in [0, 1].
    #[arg(long, required_unless_present = "toy", conflicts_with = "toy")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub header: bool,
    /// Built-in toy data set instead of --data.
    #[arg(long, value_enum)]
    pub toy: Option<Toy>,
    #[arg(long, default_value_t = 5000)]
    pub toy_n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 64, 64, 64])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub noise_dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value = "mix:gaussian:2,5,10,20,40,80")]
    pub kernel: KernelChoice,
    /// Prior concentration; a > 0 centres the prior on a smoothed copy of the data.
    #[arg(long = "a", default_value_t = 0.0)]
    pub a: f64,
    #[arg(long, default_value_t = 0.05)]
    pub base_bandwidth: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Score the generator every this many iterations (0 = never).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = 5)]
    pub checkpoint_reps: usize,
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV with columns iteration, loss, grad_norm, n_terms.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GanScoreArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub nmb: usize,
    #[arg(long, default_value_t = 50)]
    pub rmb: usize,
    #[arg(long, default_value = "mix:gaussian:2,5,10,20,40,80")]
    pub kernel: KernelChoice,
    /// Generated sample size [default: rows of --real].
    #[arg(long)]
    pub n_gen: Option<usize>,
    /// Also score uniform noise on the unit cube.
    #[arg(long)]
    pub noise_baseline: bool,
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A bandwidth value or the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaArg {
    Value(f64),
    Median,
}

impl FromStr for SigmaArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("median") {
            return Ok(SigmaArg::Median);
        }
        match s.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(SigmaArg::Value(v)),
            _ => Err(Error::param(format!("bandwidth must be a positive number or 'median', got '{s}'"))),
        }
    }
}

impl SigmaArg {
    fn label(self) -> String {
        match self {
            SigmaArg::Value(v) => v.to_string(),
            SigmaArg::Median => "median".into(),
        }
    }

    fn kernel(self) -> Result<KernelChoice> {
        Ok(match self {
            SigmaArg::Value(v) => KernelSpec::gaussian(v)?.into(),
            SigmaArg::Median => KernelChoice::Median { family: Family::Gaussian, shape: None },
        })
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub null: Scenario,
    #[arg(long)]
    pub alt: Scenario,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,20,40,80,median")]
    pub sigmas: Vec<SigmaArg>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[command(flatten)]
    pub rb: RbArgs,
    #[arg(long, default_value_t = crate::bench::DEFAULT_THRESHOLDS)]
    pub thresholds: usize,
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// CSV with columns sigma (or "median"), auc, excluded replications.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}

/// What a command produced: lines for stdout and the files it wrote, primary
/// output first.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: Vec<String>,
    pub outputs: Vec<PathBuf>,
}

impl Outcome {
    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        self.stdout.push(format!("{key}\t{value}"));
    }

    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        write_file(path, contents)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }
}

/// Parse `argv` (program name first), run, and return the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command, cli.threads) {
        Ok(outcome) => {
            for line in outcome.stdout {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Run one command in a pool of `threads` workers and record its manifest.
pub fn execute(command: Command, threads: Option<usize>) -> Result<Outcome> {
    let command = match command {
        Command::Replay(r) => {
            let m = RunManifest::load(&r.manifest)?;
            if let Command::Replay(_) = m.config {
                return Err(Error::input("a manifest cannot record a replay"));
            }
            m.config
        }
        c => c,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let outcome = pool.install(|| run(&command))?;
    if let Some(primary) = outcome.outputs.first() {
        let manifest = RunManifest {
            command: command.name().into(),
            seed: command.seed(),
            version: env!("CARGO_PKG_VERSION").into(),
            threads: pool.current_num_threads(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            outputs: outcome.outputs.clone(),
            config: command.clone(),
        };
        manifest.save(&manifest_path(primary))?;
    }
    Ok(outcome)
}

fn run(command: &Command) -> Result<Outcome> {
    match command {
        Command::GofTest(a) => gof_test(a),
        Command::Roc(a) => roc(a),
        Command::Mmd(a) => mmd(a),
        Command::DpSample(a) => dp_sample(a),
        Command::GanTrain(a) => gan_train(a),
        Command::GanScore(a) => gan_score(a),
        Command::BandwidthSweep(a) => bandwidth(a),
        Command::Replay(_) => Err(Error::input("nested replay")),
    }
}

fn truncation(n_terms: Option<usize>, eps: f64) -> Truncation {
    n_terms.map_or(Truncation::Epsilon(eps), Truncation::Terms)
}

fn fixed_kernel(choice: &KernelChoice, command: &str) -> Result<KernelSpec> {
    match choice {
        KernelChoice::Fixed(spec) => Ok(spec.clone()),
        KernelChoice::Median { .. } => Err(Error::param(format!("{command} needs a fixed-bandwidth kernel"))),
    }
}

fn load_net(path: &Path) -> Result<GeneratorNet> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// A scenario name, or a path to a saved generator.
fn load_model(spec: &str, dim: usize) -> Result<Arc<dyn Sampler>> {
    let path = Path::new(spec);
    if path.is_file() {
        let net = load_net(path)?;
        if net.output_dim() != dim {
            return Err(Error::input(format!("generator outputs {} columns, data has {dim}", net.output_dim())));
        }
        return Ok(Arc::new(net));
    }
    Ok(Arc::new(ScenarioSampler::new(spec.parse::<Scenario>()?, dim)?))
}

fn gof_test(a: &GofArgs) -> Result<Outcome> {
    let x = read_matrix(&a.data, a.header)?;
    let model = load_model(&a.model, x.ncols())?;
    let cfg = a.rb.config(a.kernel.clone(), x.nrows())?;
    let report = run_gof_test(&x, model, &cfg, &mut seeded(a.seed))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = Outcome::default();
    out.line("rb", fmt_num(report.rb));
    out.line("strength", fmt_num(report.strength));
    out.line("decision", report.decision);
    out.line("n_terms", report.n_terms_used);
    out.line("kernel", &report.kernel);
    if let Some(p) = &a.out {
        out.write(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    if let Some(p) = &a.samples {
        let rows: Vec<String> = report
            .prior_samples
            .iter()
            .zip(&report.posterior_samples)
            .map(|(u, v)| format!("{},{}\n", fmt_num(*u), fmt_num(*v)))
            .collect();
        out.write(p, &rows.concat())?;
    }
    Ok(out)
}

fn roc(a: &RocArgs) -> Result<Outcome> {
    let null = ScenarioSpec::new(a.null, a.d, a.n)?;
    let alt = ScenarioSpec::new(a.alt, a.d, a.n)?;
    let mut rng = seeded(a.seed);
    let curve = match a.method {
        RocMethod::Rb => {
            let cfg = a.rb.config(a.kernel.clone(), a.n)?;
            run_roc_study(&null, &alt, &cfg, a.reps, a.thresholds, &mut rng)?
        }
        RocMethod::Permutation => {
            let spec = fixed_kernel(&a.kernel, "roc --method permutation")?;
            run_roc_study_permutation(&null, &alt, &spec, a.perms, a.reps, a.thresholds, &mut rng)?
        }
    };
    let mut out = Outcome::default();
    let csv: String = curve
        .thresholds
        .iter()
        .zip(&curve.fpr)
        .zip(&curve.tpr)
        .map(|((t, f), p)| format!("{},{},{}\n", fmt_num(*t), fmt_num(*f), fmt_num(*p)))
        .collect();
    out.write(&a.out, &csv)?;
    if let Some(p) = &a.svg {
        let title = format!("{} vs {} (d = {}, n = {}), AUC {:.3}", a.null, a.alt, a.d, a.n, curve.auc);
        out.write(p, &svg::roc_svg(&curve.fpr, &curve.tpr, &title))?;
    }
    if let Some(p) = &a.json {
        out.write(p, &(serde_json::to_string_pretty(&curve)? + "\n"))?;
    }
    out.line("auc", fmt_num(curve.auc));
    out.line("excluded", curve.excluded_null + curve.excluded_alt);
    Ok(out)
}

fn mmd(a: &MmdArgs) -> Result<Outcome> {
    let x = read_csv(&a.x, a.header)?;
    let y = read_csv(&a.y, a.header)?;
    let measure = || -> Result<Option<DiscreteMeasure>> {
        let Some(path) = &a.weights else { return Ok(None) };
        let w = read_csv(path, a.header)?;
        if w.ncols() != 1 {
            return Err(Error::input("weights file must have exactly one column"));
        }
        DiscreteMeasure::new(w.column(0).to_vec(), x.clone()).map(Some)
    };
    let value = if a.energy {
        let p = match measure()? {
            Some(p) => p,
            None => DiscreteMeasure::uniform(x.clone())?,
        };
        energy_weighted(&p, y.view())?
    } else {
        let spec = a.kernel.resolve(x.view(), y.view())?;
        match measure()? {
            Some(p) => mmd2_weighted(&p, y.view(), &spec)?,
            None => mmd2_empirical(x.view(), y.view(), &spec)?,
        }
    };
    let mut out = Outcome::default();
    out.stdout.push(fmt_num(value));
    if let Some(p) = &a.out {
        out.write(p, &format!("{}\n", fmt_num(value)))?;
    }
    Ok(out)
}

fn measure_csv(p: &DiscreteMeasure) -> String {
    p.weights()
        .iter()
        .zip(p.atoms().rows())
        .map(|(w, atom)| {
            let mut fields = vec![fmt_num(*w)];
            fields.extend(atom.iter().map(|v| fmt_num(*v)));
            fields.join(",") + "\n"
        })
        .collect()
}

fn dp_sample(a: &DpSampleArgs) -> Result<Outcome> {
    let mut rng = seeded(a.seed);
    let trunc = truncation(a.n_terms, a.eps);
    let measure = match &a.data {
        None => {
            let d = a.d.ok_or_else(|| Error::param("--d is required when sampling the prior"))?;
            let base: Arc<dyn Sampler> = Arc::new(ScenarioSampler::new(a.base.unwrap_or(Scenario::NoDifference), d)?);
            match a.method {
                DpMethod::Ishwaran => {
                    let params = DPParams::new(a.a, base, trunc)?.with_max_terms(a.max_terms)?;
                    let n = params.resolve_terms(&mut rng)?.n_terms;
                    sample_dp_prior(&params, n, &mut rng)?
                }
                DpMethod::StickBreaking => {
                    let k = a.n_terms.ok_or_else(|| Error::param("stick-breaking needs --n-terms"))?;
                    sample_stick_breaking(a.a, base.as_ref(), k, &mut rng)?
                }
            }
        }
        Some(path) => {
            if a.method == DpMethod::StickBreaking {
                return Err(Error::param("stick-breaking is only available for the prior"));
            }
            let x = read_matrix(path, a.header)?;
            let base = match a.base {
                Some(s) => Some(Arc::new(ScenarioSampler::new(s, x.ncols())?) as Arc<dyn Sampler>),
                None => None,
            };
            let post = PosteriorParams::new(a.a, Arc::new(x), base)?;
            let n = resolve_terms(post.concentration, trunc, a.max_terms, &mut rng)?.n_terms;
            sample_dp_posterior(&post, n, &mut rng)?
        }
    };
    let csv = measure_csv(&measure);
    let mut out = Outcome::default();
    match &a.out {
        Some(p) => {
            out.write(p, &csv)?;
            out.line("n_terms", measure.len());
        }
        None => out.stdout.push(csv.trim_end().to_string()),
    }
    Ok(out)
}

fn gan_train(a: &GanTrainArgs) -> Result<Outcome> {
    let data: Array2<f64> = match (&a.data, a.toy) {
        (Some(p), _) => read_matrix(p, a.header)?,
        (None, Some(Toy::Ring)) => eight_gaussians(a.toy_n, &mut substream(a.seed, 0)),
        (None, None) => return Err(Error::param("one of --data or --toy is required")),
    };
    let mut dims = vec![a.noise_dim];
    dims.extend(&a.hidden);
    dims.push(data.ncols());
    let net = GeneratorNet::init(&dims, &mut substream(a.seed, 1))?;
    let mut cfg = TrainConfig::new(fixed_kernel(&a.kernel, "gan-train")?);
    cfg.batch_size = a.batch;
    cfg.iterations = a.iters;
    cfg.concentration = a.a;
    cfg.truncation = Truncation::Epsilon(a.eps);
    cfg.adam.learning_rate = a.lr;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.checkpoint_reps = a.checkpoint_reps;
    if a.a > 0.0 {
        cfg.base = Some(Arc::new(SmoothedEmpiricalSampler::new(data.clone(), a.base_bandwidth)?));
    }
    let (net, history) = train(net, &data, &cfg, &mut substream(a.seed, 2))?;
    let mut out = Outcome::default();
    out.write(&a.out, &(serde_json::to_string(&net)? + "\n"))?;
    if let Some(p) = &a.history {
        let csv: String = (0..history.loss.len())
            .map(|i| {
                format!(
                    "{},{},{},{}\n",
                    i,
                    fmt_num(history.loss[i]),
                    fmt_num(history.grad_norm[i]),
                    history.n_terms[i]
                )
            })
            .collect();
        out.write(p, &csv)?;
    }
    for c in &history.checkpoints {
        out.line("checkpoint", format!("{}\t{}", c.iteration, fmt_num(c.mmds)));
    }
    out.line("final_loss", fmt_num(*history.loss.last().expect("at least one iteration")));
    Ok(out)
}

fn gan_score(a: &GanScoreArgs) -> Result<Outcome> {
    let real = read_matrix(&a.real, a.header)?;
    let net = load_net(&a.model)?;
    if net.output_dim() != real.ncols() {
        return Err(Error::input(format!("generator outputs {} columns, data has {}", net.output_dim(), real.ncols())));
    }
    let spec = fixed_kernel(&a.kernel, "gan-score")?;
    let mut rng = seeded(a.seed);
    let n_gen = a.n_gen.unwrap_or(real.nrows());
    let generated = Sampler::sample(&net, n_gen, &mut rng);
    let score = mmds_score(&real, &generated, a.nmb, a.rmb, &spec, &mut rng)?;
    let mut out = Outcome::default();
    out.line("mmds", fmt_num(score));
    let mut text = format!("{}\n", fmt_num(score));
    if a.noise_baseline {
        let noise = uniform_baseline(n_gen, real.ncols(), &mut rng);
        let base = mmds_score(&real, &noise, a.nmb, a.rmb, &spec, &mut rng)?;
        out.line("mmds_noise", fmt_num(base));
        text.push_str(&format!("{}\n", fmt_num(base)));
    }
    if let Some(p) = &a.out {
        out.write(p, &text)?;
    }
    Ok(out)
}

fn bandwidth(a: &SweepArgs) -> Result<Outcome> {
    let null = ScenarioSpec::new(a.null, a.d, a.n)?;
    let alt = ScenarioSpec::new(a.alt, a.d, a.n)?;
    let kernels = a.sigmas.iter().map(|s| s.kernel()).collect::<Result<Vec<_>>>()?;
    let cfg = a.rb.config(kernels.first().cloned().ok_or_else(|| Error::param("no bandwidths given"))?, a.n)?;
    let points = kernel_sweep(&null, &alt, &cfg, &kernels, a.reps, a.thresholds, &mut seeded(a.seed))?;
    let mut out = Outcome::default();
    let mut csv = String::new();
    for (s, p) in a.sigmas.iter().zip(&points) {
        csv.push_str(&format!("{},{},{}\n", s.label(), fmt_num(p.auc), p.excluded));
        out.line(&s.label(), fmt_num(p.auc));
    }
    out.write(&a.out, &csv)?;
    Ok(out)
}
