//! Finite Dirichlet-process approximations.
//!
//! A draw from `DP(a, H)` is approximated by `sum_i J_i delta(V_i)` with
//! `(J_1, .., J_N) ~ Dirichlet(a/N, .., a/N)` and `V_i ~ H` i.i.d. The number of
//! terms `N` either comes from the caller or from a random stopping rule on
//! normalized Gamma weights. Conjugacy gives the posterior as the same
//! construction with concentration `a + n` and base `a/(a+n) H + n/(a+n) F_n`.
//!
//! Gamma variates with shape `a/N` are routinely far below one, so weights are
//! generated and normalized on the log scale.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of approximation terms.
pub const DEFAULT_MAX_TERMS: usize = 10_000;

const MAX_DRAW_RETRIES: usize = 100;

/// Anything that can produce i.i.d. rows from a fixed `dim`-dimensional law.
pub trait Sampler: Send + Sync {
    fn dim(&self) -> usize;

    /// Draw `n` rows.
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64>;
}

impl<S: Sampler + ?Sized> Sampler for Arc<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        (**self).sample(n, rng)
    }
}

/// Uniform resampling of the rows of a fixed matrix (the ECDF `F_n`).
#[derive(Debug, Clone)]
pub struct EmpiricalSampler {
    data: Array2<f64>,
}

impl EmpiricalSampler {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::param("empirical sampler needs at least one row"));
        }
        Ok(Self { data })
    }
}

impl Sampler for EmpiricalSampler {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let rows = self.data.nrows();
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            let i = rng.random_range(0..rows);
            row.assign(&self.data.row(i));
        }
        out
    }
}

/// Rows of a fixed matrix perturbed by isotropic Gaussian noise: a kernel
/// density estimate used as a data-driven base measure.
#[derive(Debug, Clone)]
pub struct SmoothedEmpiricalSampler {
    data: Array2<f64>,
    bandwidth: f64,
}

impl SmoothedEmpiricalSampler {
    pub fn new(data: Array2<f64>, bandwidth: f64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::param("smoothed sampler needs at least one row"));
        }
        if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
            return Err(Error::param(format!("bandwidth must be >= 0, got {bandwidth}")));
        }
        Ok(Self { data, bandwidth })
    }
}

impl Sampler for SmoothedEmpiricalSampler {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let rows = self.data.nrows();
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            let i = rng.random_range(0..rows);
            for (o, &x) in row.iter_mut().zip(self.data.row(i).iter()) {
                let z: f64 = StandardNormal.sample(rng);
                *o = x + self.bandwidth * z;
            }
        }
        out
    }
}

/// How the number of approximation terms is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Random stopping rule with threshold `epsilon` in (0, 1).
    Epsilon(f64),
    /// A fixed number of terms.
    Terms(usize),
}

impl Truncation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Truncation::Epsilon(e) if !(e > 0.0 && e < 1.0) => {
                Err(Error::param(format!("truncation epsilon must lie in (0,1), got {e}")))
            }
            Truncation::Terms(0) => Err(Error::param("explicit term count must be >= 1")),
            _ => Ok(()),
        }
    }
}

/// Prior parameters of `DP(a, H)` plus the truncation policy.
#[derive(Clone)]
pub struct DPParams {
    pub concentration: f64,
    pub base: Arc<dyn Sampler>,
    pub truncation: Truncation,
    pub max_terms: usize,
}

impl std::fmt::Debug for DPParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DPParams")
            .field("concentration", &self.concentration)
            .field("dim", &self.base.dim())
            .field("truncation", &self.truncation)
            .field("max_terms", &self.max_terms)
            .finish()
    }
}

impl DPParams {
    pub fn new(concentration: f64, base: Arc<dyn Sampler>, truncation: Truncation) -> Result<Self> {
        if !(concentration >= 0.0 && concentration.is_finite()) {
            return Err(Error::param(format!("concentration must be >= 0, got {concentration}")));
        }
        truncation.validate()?;
        Ok(Self { concentration, base, truncation, max_terms: DEFAULT_MAX_TERMS })
    }

    pub fn with_max_terms(mut self, max_terms: usize) -> Result<Self> {
        if max_terms < 2 {
            return Err(Error::param("max_terms must be >= 2"));
        }
        self.max_terms = max_terms;
        Ok(self)
    }

    /// Number of terms for the next draw: the fixed count, or one run of the
    /// stopping rule.
    pub fn resolve_terms<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<StoppingOutcome> {
        resolve_terms(self.concentration, self.truncation, self.max_terms, rng)
    }
}

/// Result of the random stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingOutcome {
    pub n_terms: usize,
    /// The rule had not fired by `max_terms` and the result was clamped.
    pub clamped: bool,
}

/// A weighted atomic probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
    atoms: Array2<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>, atoms: Array2<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::input("a discrete measure needs at least one atom"));
        }
        if weights.len() != atoms.nrows() {
            return Err(Error::input(format!(
                "{} weights but {} atoms",
                weights.len(),
                atoms.nrows()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::input("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { weights, atoms })
    }

    /// Equal weights on every row of `atoms`.
    pub fn uniform(atoms: Array2<f64>) -> Result<Self> {
        let n = atoms.nrows();
        Self::new(vec![1.0 / n as f64; n], atoms)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atom(&self, i: usize) -> ArrayView1<'_, f64> {
        self.atoms.row(i)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    /// Mass assigned to the atoms selected by `pred`.
    pub fn mass_where(&self, mut pred: impl FnMut(ArrayView1<'_, f64>) -> bool) -> f64 {
        self.weights
            .iter()
            .zip(self.atoms.rows())
            .filter(|(_, v)| pred(*v))
            .map(|(w, _)| *w)
            .sum()
    }
}

/// Parameters of the conjugate posterior `DP(a + n, H*)`.
#[derive(Clone)]
pub struct PosteriorParams {
    pub concentration: f64,
    pub mixture_weight_base: f64,
    pub data: Arc<Array2<f64>>,
    pub base: Option<Arc<dyn Sampler>>,
}

impl PosteriorParams {
    /// Posterior after observing the rows of `data` under a `DP(a, base)` prior.
    /// `base` may be omitted only when `a = 0`.
    pub fn new(prior_concentration: f64, data: Arc<Array2<f64>>, base: Option<Arc<dyn Sampler>>) -> Result<Self> {
        if !(prior_concentration >= 0.0 && prior_concentration.is_finite()) {
            return Err(Error::param(format!(
                "concentration must be >= 0, got {prior_concentration}"
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::param("posterior needs a non-empty sample"));
        }
        if prior_concentration > 0.0 {
            match &base {
                None => return Err(Error::param("a > 0 requires a base sampler")),
                Some(b) if b.dim() != data.ncols() => {
                    return Err(Error::param(format!(
                        "base sampler has dimension {} but data has {}",
                        b.dim(),
                        data.ncols()
                    )))
                }
                _ => {}
            }
        }
        let n = data.nrows() as f64;
        Ok(Self {
            concentration: prior_concentration + n,
            mixture_weight_base: prior_concentration / (prior_concentration + n),
            data,
            base,
        })
    }

    pub fn sample_size(&self) -> usize {
        self.data.nrows()
    }
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for very small shapes.
///
/// For shape < 1 uses `G = G' U^{1/shape}` with `G' ~ Gamma(shape + 1, 1)`,
/// evaluated on the log scale so that it never underflows.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("shape > 0").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("shape > 0").sample(rng);
        let u = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Symmetric Dirichlet(shape, .., shape) draw of length `n`.
pub fn sample_symmetric_dirichlet<R: Rng + ?Sized>(shape: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(Error::param(format!("Dirichlet shape must be > 0, got {shape}")));
    }
    if n == 0 {
        return Err(Error::param("Dirichlet dimension must be >= 1"));
    }
    let mut logs = vec![0.0; n];
    for _ in 0..MAX_DRAW_RETRIES {
        for l in logs.iter_mut() {
            *l = ln_gamma_variate(shape, rng);
        }
        if logs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            continue;
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            continue;
        }
        let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        return Ok(w);
    }
    Err(Error::NumericUnderflow(format!(
        "Dirichlet({shape}) draw of length {n} failed after {MAX_DRAW_RETRIES} retries"
    )))
}

/// Random stopping rule: the first `j` such that, for fresh i.i.d.
/// `H_{i,j} ~ Gamma(a/j, 1)`, `H_{j,j} / sum_{i<=j} H_{i,j} < epsilon`.
pub fn stopping_rule_terms<R: Rng + ?Sized>(
    concentration: f64,
    epsilon: f64,
    max_terms: usize,
    rng: &mut R,
) -> Result<StoppingOutcome> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::param(format!(
            "stopping rule undefined for concentration {concentration}"
        )));
    }
    Truncation::Epsilon(epsilon).validate()?;
    if max_terms < 2 {
        return Err(Error::param("max_terms must be >= 2"));
    }
    let log_eps = epsilon.ln();
    let mut logs = Vec::with_capacity(64);
    // j = 1 has ratio exactly 1, which never falls below epsilon.
    for j in 2..=max_terms {
        let shape = concentration / j as f64;
        let mut attempt = 0;
        let log_ratio = loop {
            logs.clear();
            logs.extend((0..j).map(|_| ln_gamma_variate(shape, rng)));
            let lse = log_sum_exp(&logs);
            if lse.is_finite() && logs.iter().all(|l| !l.is_nan()) {
                break logs[j - 1] - lse;
            }
            attempt += 1;
            if attempt >= MAX_DRAW_RETRIES {
                return Err(Error::NumericUnderflow(format!(
                    "Gamma({shape}) draws degenerate at j = {j}"
                )));
            }
        };
        if log_ratio < log_eps {
            return Ok(StoppingOutcome { n_terms: j, clamped: false });
        }
    }
    Ok(StoppingOutcome { n_terms: max_terms, clamped: true })
}

/// Stopping-rule draw from a [`DPParams`] (which must carry an epsilon).
pub fn stopping_rule_n<R: Rng + ?Sized>(params: &DPParams, rng: &mut R) -> Result<StoppingOutcome> {
    match params.truncation {
        Truncation::Epsilon(eps) => stopping_rule_terms(params.concentration, eps, params.max_terms, rng),
        Truncation::Terms(_) => Err(Error::param("stopping rule requires a truncation epsilon")),
    }
}

pub(crate) fn resolve_terms<R: Rng + ?Sized>(
    concentration: f64,
    truncation: Truncation,
    max_terms: usize,
    rng: &mut R,
) -> Result<StoppingOutcome> {
    match truncation {
        Truncation::Terms(n) if n >= 1 => Ok(StoppingOutcome { n_terms: n, clamped: false }),
        Truncation::Terms(_) => Err(Error::param("explicit term count must be >= 1")),
        Truncation::Epsilon(eps) => stopping_rule_terms(concentration, eps, max_terms, rng),
    }
}

/// Ishwaran's finite approximation of a prior draw from `DP(a, H)`.
pub fn sample_dp_prior<R: RngCore + ?Sized>(params: &DPParams, n_terms: usize, rng: &mut R) -> Result<DiscreteMeasure> {
    if n_terms == 0 {
        return Err(Error::param("n_terms must be >= 1"));
    }
    if !(params.concentration > 0.0) {
        return Err(Error::param(
            "prior draws need concentration > 0 (a = 0 is only meaningful a posteriori)",
        ));
    }
    let weights = sample_symmetric_dirichlet(params.concentration / n_terms as f64, n_terms, rng)?;
    let atoms = params.base.sample(n_terms, &mut as_dyn(rng));
    DiscreteMeasure::new_unchecked_sum(weights, atoms)
}

/// Finite approximation of a draw from the posterior `DP(a + n, H*)`.
pub fn sample_dp_posterior<R: RngCore + ?Sized>(
    post: &PosteriorParams,
    n_terms: usize,
    rng: &mut R,
) -> Result<DiscreteMeasure> {
    if n_terms == 0 {
        return Err(Error::param("n_terms must be >= 1"));
    }
    let data = &post.data;
    if data.nrows() == 0 {
        return Err(Error::param("posterior needs a non-empty sample"));
    }
    let weights = sample_symmetric_dirichlet(post.concentration / n_terms as f64, n_terms, rng)?;

    let from_base: Vec<bool> = (0..n_terms)
        .map(|_| post.mixture_weight_base > 0.0 && rng.random::<f64>() < post.mixture_weight_base)
        .collect();
    let n_base = from_base.iter().filter(|b| **b).count();
    let base_draws = match (&post.base, n_base) {
        (_, 0) => None,
        (Some(h), k) => Some(h.sample(k, &mut as_dyn(rng))),
        (None, _) => unreachable!("a > 0 without base rejected at construction"),
    };

    let mut atoms = Array2::zeros((n_terms, data.ncols()));
    let mut next_base = 0;
    for (i, mut row) in atoms.rows_mut().into_iter().enumerate() {
        if from_base[i] {
            let draws = base_draws.as_ref().expect("counted above");
            row.assign(&draws.row(next_base));
            next_base += 1;
        } else {
            let j = rng.random_range(0..data.nrows());
            row.assign(&data.row(j));
        }
    }
    DiscreteMeasure::new_unchecked_sum(weights, atoms)
}

/// Truncated stick-breaking draw with `k_trunc` atoms; the mass left after the
/// last break goes to the final atom.
pub fn sample_stick_breaking<R: RngCore + ?Sized>(
    concentration: f64,
    base: &dyn Sampler,
    k_trunc: usize,
    rng: &mut R,
) -> Result<DiscreteMeasure> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::param(format!("stick-breaking needs a > 0, got {concentration}")));
    }
    if k_trunc == 0 {
        return Err(Error::param("k_trunc must be >= 1"));
    }
    let mut weights = Vec::with_capacity(k_trunc);
    let mut remaining = 1.0;
    for _ in 0..k_trunc - 1 {
        // Beta(1, a) by inversion.
        let u = 1.0 - rng.random::<f64>();
        let beta = 1.0 - u.powf(1.0 / concentration);
        weights.push(beta * remaining);
        remaining *= 1.0 - beta;
    }
    weights.push(remaining);
    let atoms = base.sample(k_trunc, &mut as_dyn(rng));
    DiscreteMeasure::new_unchecked_sum(weights, atoms)
}

impl DiscreteMeasure {
    /// Construct from weights that are non-negative by construction; the sum is
    /// corrected by a final renormalization pass.
    fn new_unchecked_sum(mut weights: Vec<f64>, atoms: Array2<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-14 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Self::new(weights, atoms)
    }
}

/// Reborrow a possibly-unsized RNG as a `dyn RngCore` for [`Sampler`] calls.
fn as_dyn<R: RngCore + ?Sized>(rng: &mut R) -> DynRng<'_, R> {
    DynRng(rng)
}

struct DynRng<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
