use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::dp::Sampler;
use crate::error::{Error, Result};

/// Diagonal and off-diagonal entries of the log-normal covariance `B_d`.
const B_DIAG: f64 = 0.25;
const B_OFF: f64 = 0.2;

/// The synthetic alternatives, each compared against `F2 = N(0, I_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `N(0, I)`, the null model itself.
    NoDifference,
    /// `N(0.5 1, I)`.
    MeanShift,
    /// `exp(Z)`, `Z ~ N(0, B_d)`.
    Skewness,
    /// `½ N(-1, I) + ½ N(1, I)`.
    Mixture,
    /// `N(0, 2I)`.
    VarianceShift,
    /// i.i.d. Student-t coordinates with 3 degrees of freedom.
    HeavyTail,
    /// i.i.d. standard logistic coordinates.
    Kurtosis,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::NoDifference,
        Scenario::MeanShift,
        Scenario::Skewness,
        Scenario::Mixture,
        Scenario::VarianceShift,
        Scenario::HeavyTail,
        Scenario::Kurtosis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::NoDifference => "no_difference",
            Scenario::MeanShift => "mean_shift",
            Scenario::Skewness => "skewness",
            Scenario::Mixture => "mixture",
            Scenario::VarianceShift => "variance_shift",
            Scenario::HeavyTail => "heavy_tail",
            Scenario::Kurtosis => "kurtosis",
        }
    }

    pub fn sampler(self, dim: usize) -> Result<ScenarioSampler> {
        ScenarioSampler::new(self, dim)
    }

    /// Coordinate mean and variance.
    pub fn moments(self) -> (f64, f64) {
        match self {
            Scenario::NoDifference => (0.0, 1.0),
            Scenario::MeanShift => (0.5, 1.0),
            Scenario::Skewness => {
                let s2 = B_DIAG;
                ((s2 / 2.0).exp(), (s2.exp() - 1.0) * s2.exp())
            }
            Scenario::Mixture => (0.0, 2.0),
            Scenario::VarianceShift => (0.0, 2.0),
            Scenario::HeavyTail => (0.0, 3.0),
            Scenario::Kurtosis => (0.0, std::f64::consts::PI.powi(2) / 3.0),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == key)
            .or(match key.as_str() {
                "null" | "normal" => Some(Scenario::NoDifference),
                "lognormal" => Some(Scenario::Skewness),
                "t3" | "student_t" => Some(Scenario::HeavyTail),
                "logistic" => Some(Scenario::Kurtosis),
                _ => None,
            })
            .ok_or_else(|| {
                let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::param(format!("unknown scenario '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub dim: usize,
    pub n: usize,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, dim: usize, n: usize) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::param(format!("scenario needs d >= 1 and n >= 1, got d = {dim}, n = {n}")));
        }
        Ok(Self { scenario, dim, n })
    }
}

/// Draw `spec.n` rows from the scenario distribution.
pub fn sample_scenario<R: RngCore + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Array2<f64>> {
    let sampler = ScenarioSampler::new(spec.scenario, spec.dim)?;
    let mut rng = rng;
    Ok(sampler.sample(spec.n, &mut rng as &mut dyn RngCore))
}

/// The reference model `F2 = N(0, I_d)`.
pub fn null_model(dim: usize) -> Result<ScenarioSampler> {
    ScenarioSampler::new(Scenario::NoDifference, dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSampler {
    scenario: Scenario,
    dim: usize,
}

impl ScenarioSampler {
    pub fn new(scenario: Scenario, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("scenario dimension must be >= 1"));
        }
        if scenario == Scenario::Skewness {
            // B_d = (diag - off) I + off 11ᵀ has eigenvalues diag - off and
            // diag + (d - 1) off.
            let lo = (B_DIAG - B_OFF).min(B_DIAG + (dim as f64 - 1.0) * B_OFF);
            if lo <= 0.0 {
                return Err(Error::param(format!("B_d is not positive definite for d = {dim}")));
            }
        }
        Ok(Self { scenario, dim })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }
}

impl Sampler for ScenarioSampler {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let d = self.dim;
        let mut out = Array2::zeros((n, d));
        let normal = |rng: &mut dyn RngCore| -> f64 { StandardNormal.sample(rng) };
        for mut row in out.rows_mut() {
            match self.scenario {
                Scenario::NoDifference => row.iter_mut().for_each(|v| *v = normal(rng)),
                Scenario::MeanShift => row.iter_mut().for_each(|v| *v = 0.5 + normal(rng)),
                Scenario::VarianceShift => {
                    row.iter_mut().for_each(|v| *v = std::f64::consts::SQRT_2 * normal(rng))
                }
                Scenario::Mixture => {
                    let shift = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    row.iter_mut().for_each(|v| *v = shift + normal(rng));
                }
                Scenario::Skewness => {
                    // Z = sqrt(diag - off) e + sqrt(off) z0 1 has covariance B_d.
                    let common = B_OFF.sqrt() * normal(rng);
                    let own = (B_DIAG - B_OFF).sqrt();
                    row.iter_mut().for_each(|v| *v = (own * normal(rng) + common).exp());
                }
                Scenario::HeavyTail => {
                    let t = StudentT::new(3.0).expect("valid degrees of freedom");
                    row.iter_mut().for_each(|v| *v = t.sample(rng));
                }
                Scenario::Kurtosis => row.iter_mut().for_each(|v| {
                    let u: f64 = rng.random_range(f64::EPSILON..1.0);
                    *v = (u / (1.0 - u)).ln();
                }),
            }
        }
        out
    }
}
