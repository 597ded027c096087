//! Relative-belief goodness-of-fit test for `H0: F1 = F2`, where `F1` is seen
//! through a sample and `F2` is a model that can only be simulated.
//!
//! Prior and posterior draws of the DP-weighted MMD² against model samples
//! (fresh per replication unless pinned) are compared through their ECDFs on a grid of prior quantiles.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrepancy::{mmd2_weighted, ModelSample};
use crate::dp::{
    resolve_terms, sample_dp_posterior, sample_dp_prior, DPParams, PosteriorParams, Sampler, Truncation,
    DEFAULT_MAX_TERMS,
};
use crate::error::{Error, Result};
use crate::kernels::{KernelChoice, KernelSpec};
use crate::stream::{fork_root, substream};

/// Test configuration. Defaults follow the experiments: `ε = 1e-3`,
/// `ℓ = 1000`, `M = 20`, `i0 = 1`, a fresh model sample per replication.
#[derive(Clone)]
pub struct RBConfig {
    pub concentration: f64,
    pub truncation: Truncation,
    pub max_terms: usize,
    pub mc_reps: usize,
    pub grid_m: usize,
    pub grid_i0: usize,
    pub kernel: KernelChoice,
    pub resample_model_per_rep: bool,
    /// Model sample size `m`; defaults to `n`.
    pub model_size: Option<usize>,
    /// Base measure of the DP prior. `None` uses the model itself (`H = F2`),
    /// which the test construction assumes; overriding it is only useful to
    /// study what goes wrong otherwise.
    pub base: Option<Arc<dyn Sampler>>,
}

impl fmt::Debug for RBConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RBConfig")
            .field("concentration", &self.concentration)
            .field("truncation", &self.truncation)
            .field("max_terms", &self.max_terms)
            .field("mc_reps", &self.mc_reps)
            .field("grid_m", &self.grid_m)
            .field("grid_i0", &self.grid_i0)
            .field("kernel", &self.kernel)
            .field("resample_model_per_rep", &self.resample_model_per_rep)
            .field("model_size", &self.model_size)
            .field("base_override", &self.base.is_some())
            .finish()
    }
}

impl RBConfig {
    pub fn new(concentration: f64, kernel: impl Into<KernelChoice>) -> Self {
        Self {
            concentration,
            truncation: Truncation::Epsilon(1e-3),
            max_terms: DEFAULT_MAX_TERMS,
            mc_reps: 1000,
            grid_m: 20,
            grid_i0: 1,
            kernel: kernel.into(),
            resample_model_per_rep: true,
            model_size: None,
            base: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.concentration >= 0.0 && self.concentration.is_finite()) {
            return Err(Error::param(format!("concentration must be >= 0, got {}", self.concentration)));
        }
        self.truncation.validate()?;
        if self.max_terms < 2 {
            return Err(Error::param("max_terms must be >= 2"));
        }
        if self.grid_m == 0 || self.grid_i0 == 0 || self.grid_i0 >= self.grid_m {
            return Err(Error::param(format!(
                "grid needs 0 < i0 < M, got i0 = {}, M = {}",
                self.grid_i0, self.grid_m
            )));
        }
        if self.mc_reps < self.grid_m {
            return Err(Error::param(format!(
                "need at least M = {} Monte Carlo replications, got {}",
                self.grid_m, self.mc_reps
            )));
        }
        if self.model_size == Some(0) {
            return Err(Error::input("model sample size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    Prior,
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "evidence_for_H0")]
    EvidenceFor,
    #[serde(rename = "evidence_against_H0")]
    EvidenceAgainst,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

impl Decision {
    pub fn from_rb(rb: f64) -> Self {
        if rb > 1.0 {
            Decision::EvidenceFor
        } else if rb < 1.0 {
            Decision::EvidenceAgainst
        } else {
            Decision::Inconclusive
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::EvidenceFor => "evidence_for_H0",
            Decision::EvidenceAgainst => "evidence_against_H0",
            Decision::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBReport {
    pub rb: f64,
    pub strength: f64,
    pub decision: Decision,
    pub n_terms_used: usize,
    /// The stopping rule hit `max_terms`.
    pub clamped: bool,
    pub kernel: String,
    pub sample_size: usize,
    pub model_size: usize,
    pub warnings: Vec<String>,
    pub prior_samples: Vec<f64>,
    pub posterior_samples: Vec<f64>,
}

/// Everything fixed across the `ℓ` replications of one test run.
pub struct Simulation<'a> {
    pub data: Arc<Array2<f64>>,
    pub model_sample: ArrayView2<'a, f64>,
    pub model: &'a dyn Sampler,
    pub base: Arc<dyn Sampler>,
    pub kernel: &'a KernelSpec,
    pub concentration: f64,
    pub n_terms: usize,
    pub reps: usize,
    pub resample_model_per_rep: bool,
}

impl Simulation<'_> {
    /// `ℓ` MMD² draws; replication `r` uses sub-stream `offset + r` of `root`.
    pub fn run(&self, which: Which, root: u64, offset: u64) -> Result<Vec<f64>> {
        let m = self.model_sample.nrows();
        if m == 0 {
            return Err(Error::input("model sample is empty"));
        }
        let fixed = ModelSample::new(self.model_sample, self.kernel)?;
        let prior = match which {
            Which::Prior => Some(
                DPParams::new(self.concentration, self.base.clone(), Truncation::Terms(self.n_terms))?,
            ),
            Which::Posterior => None,
        };
        let post = match which {
            Which::Posterior => Some(PosteriorParams::new(
                self.concentration,
                self.data.clone(),
                Some(self.base.clone()),
            )?),
            Which::Prior => None,
        };
        (0..self.reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(root, offset + r as u64);
                let measure = match (&prior, &post) {
                    (Some(p), _) => sample_dp_prior(p, self.n_terms, &mut rng)?,
                    (_, Some(p)) => sample_dp_posterior(p, self.n_terms, &mut rng)?,
                    _ => unreachable!(),
                };
                if self.resample_model_per_rep {
                    let y = self.model.sample(m, &mut rng);
                    mmd2_weighted(&measure, y.view(), self.kernel)
                } else {
                    fixed.mmd2(&measure)
                }
            })
            .collect()
    }
}

/// `ℓ` prior or posterior MMD² draws with one stopping-rule draw of `N` and a
/// single model sample, as inside [`run_gof_test`].
pub fn simulate_mmd_samples<R: Rng + ?Sized>(
    x: &Array2<f64>,
    model: Arc<dyn Sampler>,
    cfg: &RBConfig,
    which: Which,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let prepared = prepare(x, model, cfg, rng)?;
    let sim = prepared.simulation(x, cfg);
    sim.run(which, prepared.root, if which == Which::Prior { PRIOR_OFFSET } else { posterior_offset(cfg) })
}

const PRIOR_OFFSET: u64 = 2;

fn posterior_offset(cfg: &RBConfig) -> u64 {
    PRIOR_OFFSET + cfg.mc_reps as u64
}

struct Prepared {
    root: u64,
    y: Array2<f64>,
    model: Arc<dyn Sampler>,
    base: Arc<dyn Sampler>,
    kernel: KernelSpec,
    n_terms: usize,
    clamped: bool,
}

impl Prepared {
    fn simulation<'a>(&'a self, x: &Array2<f64>, cfg: &RBConfig) -> Simulation<'a> {
        Simulation {
            data: Arc::new(x.clone()),
            model_sample: self.y.view(),
            model: self.model.as_ref(),
            base: self.base.clone(),
            kernel: &self.kernel,
            concentration: cfg.concentration,
            n_terms: self.n_terms,
            reps: cfg.mc_reps,
            resample_model_per_rep: cfg.resample_model_per_rep,
        }
    }
}

fn prepare<R: Rng + ?Sized>(x: &Array2<f64>, model: Arc<dyn Sampler>, cfg: &RBConfig, rng: &mut R) -> Result<Prepared> {
    cfg.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::input(format!("need at least 2 observations, got {n}")));
    }
    if model.dim() != x.ncols() {
        return Err(Error::input(format!("model dimension {} but data has {}", model.dim(), x.ncols())));
    }
    let base = cfg.base.clone().unwrap_or_else(|| model.clone());
    if base.dim() != x.ncols() {
        return Err(Error::input(format!("base dimension {} but data has {}", base.dim(), x.ncols())));
    }
    let root = fork_root(rng);
    let m = cfg.model_size.unwrap_or(n);
    let y = model.sample(m, &mut substream(root, 0));
    // One N per run, shared by prior and posterior; sized for the posterior
    // concentration a + n, which needs the most terms.
    let stop = resolve_terms(cfg.concentration + n as f64, cfg.truncation, cfg.max_terms, &mut substream(root, 1))?;
    let kernel = cfg.kernel.resolve(x.view(), y.view())?;
    Ok(Prepared { root, y, model, base, kernel, n_terms: stop.n_terms, clamped: stop.clamped })
}

/// Right-continuous ECDF: fraction of samples `<= x`.
pub fn ecdf_eval(samples: &[f64], x: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("ECDF of an empty sample"));
    }
    Ok(samples.iter().filter(|s| **s <= x).count() as f64 / samples.len() as f64)
}

/// The `⌈p ℓ⌉`-th order statistic.
pub fn empirical_quantile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("quantile of an empty sample"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::input(format!("quantile level must lie in (0,1], got {p}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(sorted.len(), p) - 1])
}

/// One-based rank `k = ⌈p ℓ⌉`, corrected for rounding so that `k / ℓ >= p`
/// holds in floating point and `k` is the smallest such rank.
fn quantile_rank(len: usize, p: f64) -> usize {
    let l = len as f64;
    let mut k = ((p * l).ceil() as usize).clamp(1, len);
    while k > 1 && (k - 1) as f64 / l >= p {
        k -= 1;
    }
    while k < len && (k as f64 / l) < p {
        k += 1;
    }
    k
}

/// ECDF over a sorted sample.
fn sorted_ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|s| *s <= x) as f64 / sorted.len() as f64
}

/// Relative belief ratio at the hypothesized value and its strength.
///
/// The prior grid is `d̂_{i/M}`, `i = 1..M`, with `d̂_0 = -∞`. Grid cells with
/// no prior mass are left out of the strength sum.
pub fn estimate_rb_strength(prior: &[f64], posterior: &[f64], grid_m: usize, grid_i0: usize) -> Result<(f64, f64)> {
    if grid_m == 0 || grid_i0 == 0 || grid_i0 >= grid_m {
        return Err(Error::param(format!("grid needs 0 < i0 < M, got i0 = {grid_i0}, M = {grid_m}")));
    }
    if prior.len() < grid_m || posterior.len() < grid_m {
        return Err(Error::input(format!(
            "need at least M = {grid_m} prior and posterior draws, got {} and {}",
            prior.len(),
            posterior.len()
        )));
    }
    if prior.iter().chain(posterior).any(|v| v.is_nan()) {
        return Err(Error::input("MMD draws contain NaN"));
    }
    let mut pri = prior.to_vec();
    pri.sort_by(f64::total_cmp);
    let mut pos = posterior.to_vec();
    pos.sort_by(f64::total_cmp);
    if pri[0] == pri[pri.len() - 1] {
        return Err(Error::DegeneratePrior { prior: pri, posterior: pos });
    }

    let l = pri.len();
    let mf = grid_m as f64;
    let grid: Vec<f64> = (0..=grid_m)
        .map(|i| if i == 0 { f64::NEG_INFINITY } else { pri[quantile_rank(l, i as f64 / mf) - 1] })
        .collect();
    let f_pri: Vec<f64> = grid.iter().map(|d| sorted_ecdf(&pri, *d)).collect();
    let f_pos: Vec<f64> = grid.iter().map(|d| sorted_ecdf(&pos, *d)).collect();

    // One rounding from exact counts, so equal ratios give equal floats.
    let hits = |sorted: &[f64], d: f64| sorted.partition_point(|v| *v <= d) as u128;
    let d0 = grid[grid_i0];
    let rb = ((hits(&pos, d0) * l as u128) as f64 / (hits(&pri, d0) * pos.len() as u128) as f64).min(mf / grid_i0 as f64);

    let mut strength = 0.0;
    for i in 0..grid_m {
        let pri_mass = f_pri[i + 1] - f_pri[i];
        if pri_mass <= 0.0 {
            continue;
        }
        let pos_mass = f_pos[i + 1] - f_pos[i];
        if pos_mass / pri_mass <= rb {
            strength += pos_mass;
        }
    }
    Ok((rb, strength.clamp(0.0, 1.0)))
}

/// The full test: draw the model sample and `N`, simulate `ℓ` prior and
/// posterior MMD² values, and summarize them as `(RB, strength)`.
pub fn run_gof_test<R: Rng + ?Sized>(
    x: &Array2<f64>,
    model: Arc<dyn Sampler>,
    cfg: &RBConfig,
    rng: &mut R,
) -> Result<RBReport> {
    let prepared = prepare(x, model, cfg, rng)?;
    let n = x.nrows();
    let mut warnings = Vec::new();
    if cfg.concentration >= n as f64 / 2.0 {
        warnings.push(format!(
            "concentration a = {} is not below n/2 = {}; the prior may dominate the data",
            cfg.concentration,
            n as f64 / 2.0
        ));
    }
    if prepared.clamped {
        warnings.push(format!("stopping rule clamped at max_terms = {}", cfg.max_terms));
    }
    let sim = prepared.simulation(x, cfg);
    let prior_samples = sim.run(Which::Prior, prepared.root, PRIOR_OFFSET)?;
    let posterior_samples = sim.run(Which::Posterior, prepared.root, posterior_offset(cfg))?;
    let (rb, strength) = estimate_rb_strength(&prior_samples, &posterior_samples, cfg.grid_m, cfg.grid_i0)?;
    Ok(RBReport {
        rb,
        strength,
        decision: Decision::from_rb(rb),
        n_terms_used: prepared.n_terms,
        clamped: prepared.clamped,
        kernel: prepared.kernel.to_string(),
        sample_size: n,
        model_size: prepared.y.nrows(),
        warnings,
        prior_samples,
        posterior_samples,
    })
}
