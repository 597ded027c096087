//! Replication studies summarized as ROC curves.
//!
//! A replication is "positive" (rejects `H0`) when its score is strictly
//! below the threshold: small RB and small p-values both speak against `H0`.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::permutation::fnp_permutation_test;
use super::scenarios::{null_model, sample_scenario, ScenarioSpec};
use crate::dp::Sampler;
use crate::error::{Error, Result};
use crate::kernels::{KernelChoice, KernelSpec};
use crate::rb::{run_gof_test, RBConfig};
use crate::stream::{fork_root, substream, Stream};

/// Threshold count used when none is given: a 0.02 step over `[0, 20]`,
/// which contains every RB value attainable with `ℓ = 1000`, `M = 20`.
pub const DEFAULT_THRESHOLDS: usize = 1001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub tn: Vec<usize>,
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
    pub auc: f64,
    pub null_scores: Vec<f64>,
    pub alt_scores: Vec<f64>,
    /// Replications dropped because their prior draws were degenerate.
    pub excluded_null: usize,
    pub excluded_alt: usize,
}

/// `len` evenly spaced points on `[lo, hi]`.
pub fn threshold_grid(lo: f64, hi: f64, len: usize) -> Result<Vec<f64>> {
    if len < 2 || !(hi > lo) {
        return Err(Error::param(format!("threshold grid needs L >= 2 and lo < hi, got L = {len}, [{lo}, {hi}]")));
    }
    let span = hi - lo;
    Ok((0..len).map(|i| if i == len - 1 { hi } else { lo + span * i as f64 / (len - 1) as f64 }).collect())
}

/// ROC curve over `thresholds` (sorted ascending) with trapezoidal AUC over
/// the polyline from (0,0) through the sweep to (1,1).
pub fn roc_from_scores(null_scores: &[f64], alt_scores: &[f64], thresholds: &[f64]) -> Result<RocCurve> {
    if null_scores.is_empty() || alt_scores.is_empty() {
        return Err(Error::input("ROC needs at least one score per hypothesis"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param("thresholds must be strictly increasing"));
    }
    let below = |scores: &[f64], t: f64| scores.iter().filter(|s| **s < t).count();
    let (r0, r1) = (null_scores.len(), alt_scores.len());
    let tp: Vec<usize> = thresholds.iter().map(|t| below(alt_scores, *t)).collect();
    let fp: Vec<usize> = thresholds.iter().map(|t| below(null_scores, *t)).collect();
    let fn_: Vec<usize> = tp.iter().map(|v| r1 - v).collect();
    let tn: Vec<usize> = fp.iter().map(|v| r0 - v).collect();
    let tpr: Vec<f64> = tp.iter().map(|v| *v as f64 / r1 as f64).collect();
    let fpr: Vec<f64> = fp.iter().map(|v| *v as f64 / r0 as f64).collect();
    let auc = trapezoid_auc(&fpr, &tpr);
    Ok(RocCurve {
        thresholds: thresholds.to_vec(),
        fpr,
        tpr,
        tp,
        fp,
        tn,
        fn_,
        auc,
        null_scores: null_scores.to_vec(),
        alt_scores: alt_scores.to_vec(),
        excluded_null: 0,
        excluded_alt: 0,
    })
}

/// Trapezoidal area under `(fpr, tpr)` with (0,0) and (1,1) added at the ends.
pub fn trapezoid_auc(fpr: &[f64], tpr: &[f64]) -> f64 {
    let xs = std::iter::once(0.0).chain(fpr.iter().copied()).chain(std::iter::once(1.0));
    let ys = std::iter::once(0.0).chain(tpr.iter().copied()).chain(std::iter::once(1.0));
    let pts: Vec<(f64, f64)> = xs.zip(ys).collect();
    let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    area.clamp(0.0, 1.0)
}

/// Probability that an alternative score is below a null score, ties ½.
pub fn auc_mann_whitney(null_scores: &[f64], alt_scores: &[f64]) -> Result<f64> {
    if null_scores.is_empty() || alt_scores.is_empty() {
        return Err(Error::input("AUC needs at least one score per hypothesis"));
    }
    let mut wins = 0.0;
    for a in alt_scores {
        for z in null_scores {
            if a < z {
                wins += 1.0;
            } else if a == z {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (null_scores.len() * alt_scores.len()) as f64)
}

/// Generic study: `reps` samples per hypothesis scored by `score`. A `None`
/// score marks an excluded replication. Replication `r` of the null (alt)
/// uses sub-stream `2r` (`2r + 1`) of one root drawn from `rng`.
pub fn roc_study<R, F>(
    null: &ScenarioSpec,
    alt: &ScenarioSpec,
    reps: usize,
    thresholds: &[f64],
    rng: &mut R,
    score: F,
) -> Result<RocCurve>
where
    R: Rng + ?Sized,
    F: Fn(&Array2<f64>, &mut Stream) -> Result<Option<f64>>,
{
    scored_study(null, alt, reps, fork_root(rng), score).and_then(|s| s.curve(thresholds))
}

/// Raw scores of a replication study, before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyScores {
    pub null_scores: Vec<f64>,
    pub alt_scores: Vec<f64>,
    pub excluded_null: usize,
    pub excluded_alt: usize,
}

impl StudyScores {
    pub fn curve(&self, thresholds: &[f64]) -> Result<RocCurve> {
        let mut c = roc_from_scores(&self.null_scores, &self.alt_scores, thresholds)?;
        c.excluded_null = self.excluded_null;
        c.excluded_alt = self.excluded_alt;
        Ok(c)
    }
}

pub(crate) fn scored_study<F>(null: &ScenarioSpec, alt: &ScenarioSpec, reps: usize, root: u64, score: F) -> Result<StudyScores>
where
    F: Fn(&Array2<f64>, &mut Stream) -> Result<Option<f64>>,
{
    if reps < 2 {
        return Err(Error::param(format!("ROC study needs r >= 2 replications, got {reps}")));
    }
    if null.dim != alt.dim {
        return Err(Error::param("null and alternative scenarios must share a dimension"));
    }
    let mut out = StudyScores { null_scores: vec![], alt_scores: vec![], excluded_null: 0, excluded_alt: 0 };
    for r in 0..reps as u64 {
        for (spec, stream, scores, excluded) in [
            (null, 2 * r, &mut out.null_scores, &mut out.excluded_null),
            (alt, 2 * r + 1, &mut out.alt_scores, &mut out.excluded_alt),
        ] {
            let mut rng = substream(root, stream);
            let x = sample_scenario(spec, &mut rng)?;
            match score(&x, &mut rng)? {
                Some(s) => scores.push(s),
                None => *excluded += 1,
            }
        }
    }
    if out.null_scores.is_empty() || out.alt_scores.is_empty() {
        return Err(Error::input("every replication of one hypothesis was excluded"));
    }
    Ok(out)
}

/// RB score of one sample against `F2 = N(0, I)`; degenerate priors are excluded.
pub(crate) fn rb_score(x: &Array2<f64>, model: &Arc<dyn Sampler>, cfg: &RBConfig, rng: &mut Stream) -> Result<Option<f64>> {
    match run_gof_test(x, model.clone(), cfg, rng) {
        Ok(report) => Ok(Some(report.rb)),
        Err(Error::DegeneratePrior { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// ROC of the RB test with `len` thresholds on `[0, M/i0]`.
pub fn run_roc_study<R: Rng + ?Sized>(
    null: &ScenarioSpec,
    alt: &ScenarioSpec,
    cfg: &RBConfig,
    reps: usize,
    len: usize,
    rng: &mut R,
) -> Result<RocCurve> {
    let model: Arc<dyn Sampler> = Arc::new(null_model(null.dim)?);
    let grid = threshold_grid(0.0, cfg.grid_m as f64 / cfg.grid_i0 as f64, len)?;
    roc_study(null, alt, reps, &grid, rng, |x, rng| rb_score(x, &model, cfg, rng))
}

/// ROC of the permutation baseline, thresholds on `[0, 1]`. The model sample
/// has the same size as the data.
pub fn run_roc_study_permutation<R: Rng + ?Sized>(
    null: &ScenarioSpec,
    alt: &ScenarioSpec,
    spec: &KernelSpec,
    num_perms: usize,
    reps: usize,
    len: usize,
    rng: &mut R,
) -> Result<RocCurve> {
    let model = null_model(null.dim)?;
    let grid = threshold_grid(0.0, 1.0, len)?;
    roc_study(null, alt, reps, &grid, rng, |x, rng| {
        let y = model.sample(x.nrows(), rng);
        fnp_permutation_test(x.view(), y.view(), spec, num_perms, rng).map(Some)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPoint {
    pub sigma: f64,
    pub auc: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSweepPoint {
    pub kernel: String,
    pub auc: f64,
    pub excluded: usize,
}

/// RB-test AUC for each kernel choice. Every kernel sees the same replicated
/// samples and streams, so differences come from the kernel alone.
pub fn kernel_sweep<R: Rng + ?Sized>(
    null: &ScenarioSpec,
    alt: &ScenarioSpec,
    cfg: &RBConfig,
    kernels: &[KernelChoice],
    reps: usize,
    len: usize,
    rng: &mut R,
) -> Result<Vec<KernelSweepPoint>> {
    let model: Arc<dyn Sampler> = Arc::new(null_model(null.dim)?);
    let grid = threshold_grid(0.0, cfg.grid_m as f64 / cfg.grid_i0 as f64, len)?;
    let root = fork_root(rng);
    kernels
        .iter()
        .map(|kernel| {
            let mut c = cfg.clone();
            c.kernel = kernel.clone();
            let scores = scored_study(null, alt, reps, root, |x, rng| rb_score(x, &model, &c, rng))?;
            let curve = scores.curve(&grid)?;
            Ok(KernelSweepPoint {
                kernel: kernel.to_string(),
                auc: curve.auc,
                excluded: curve.excluded_null + curve.excluded_alt,
            })
        })
        .collect()
}

/// [`kernel_sweep`] over single-Gaussian bandwidths.
pub fn bandwidth_sweep<R: Rng + ?Sized>(
    null: &ScenarioSpec,
    alt: &ScenarioSpec,
    cfg: &RBConfig,
    sigmas: &[f64],
    reps: usize,
    len: usize,
    rng: &mut R,
) -> Result<Vec<BandwidthPoint>> {
    let kernels = sigmas
        .iter()
        .map(|&s| KernelSpec::gaussian(s).map(KernelChoice::from))
        .collect::<Result<Vec<_>>>()?;
    let points = kernel_sweep(null, alt, cfg, &kernels, reps, len, rng)?;
    Ok(sigmas
        .iter()
        .zip(points)
        .map(|(&sigma, p)| BandwidthPoint { sigma, auc: p.auc, excluded: p.excluded })
        .collect())
}
