use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::Rng;

use crate::discrepancy::mmd2_empirical;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// Matching score: the largest empirical MMD² over `r_mb` random pairs of
/// `n_mb`-row subsets (drawn without replacement) of the two datasets.
pub fn mmds_score<R: Rng + ?Sized>(
    real: &Array2<f64>,
    generated: &Array2<f64>,
    n_mb: usize,
    r_mb: usize,
    spec: &KernelSpec,
    rng: &mut R,
) -> Result<f64> {
    check(real, generated, n_mb, r_mb)?;
    let draws: Vec<(Vec<usize>, Vec<usize>)> = (0..r_mb)
        .map(|_| {
            (
                index::sample(rng, real.nrows(), n_mb).into_vec(),
                index::sample(rng, generated.nrows(), n_mb).into_vec(),
            )
        })
        .collect();
    mmds_with_indices(real, generated, &draws, spec)
}

/// [`mmds_score`] with explicit subset indices.
pub fn mmds_with_indices(
    real: &Array2<f64>,
    generated: &Array2<f64>,
    draws: &[(Vec<usize>, Vec<usize>)],
    spec: &KernelSpec,
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::param("MMDS needs at least one subset pair"));
    }
    let mut best = f64::NEG_INFINITY;
    for (ir, ig) in draws {
        if ir.iter().any(|i| *i >= real.nrows()) || ig.iter().any(|i| *i >= generated.nrows()) {
            return Err(Error::input("subset index out of range"));
        }
        let a = real.select(Axis(0), ir);
        let b = generated.select(Axis(0), ig);
        best = best.max(mmd2_empirical(a.view(), b.view(), spec)?);
    }
    Ok(best)
}

fn check(real: &Array2<f64>, generated: &Array2<f64>, n_mb: usize, r_mb: usize) -> Result<()> {
    if n_mb == 0 || r_mb == 0 {
        return Err(Error::param("n_mb and r_mb must be positive"));
    }
    let n = real.nrows().min(generated.nrows());
    if n_mb > n {
        return Err(Error::param(format!("subset size {n_mb} exceeds the smaller dataset ({n} rows)")));
    }
    if real.ncols() != generated.ncols() {
        return Err(Error::input(format!("dimension mismatch: {} vs {}", real.ncols(), generated.ncols())));
    }
    Ok(())
}
