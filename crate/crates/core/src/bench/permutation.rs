//! Frequentist permutation baseline for the empirical MMD².

use ndarray::{concatenate, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{sq_dist, KernelSpec};

/// Permuted statistics within this relative distance of the observed one count
/// as ties; they differ only by summation order.
const TIE_TOL: f64 = 1e-12;

/// Permutation p-value `(1 + #{permuted MMD² >= observed}) / (perms + 1)`.
///
/// The pooled Gram matrix is built once; each permutation only relabels rows.
pub fn fnp_permutation_test<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    spec: &KernelSpec,
    num_perms: usize,
    rng: &mut R,
) -> Result<f64> {
    let (observed, permuted) = permutation_statistics(x, y, spec, num_perms, rng)?;
    let tol = TIE_TOL * observed.abs().max(1.0);
    let exceed = permuted.iter().filter(|s| **s >= observed - tol).count();
    Ok((1 + exceed) as f64 / (num_perms + 1) as f64)
}

/// Observed statistic and `num_perms` relabelled ones.
fn permutation_statistics<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    spec: &KernelSpec,
    num_perms: usize,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if num_perms < 1 {
        return Err(Error::param("num_perms must be >= 1"));
    }
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::input("both samples must be non-empty"));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::input(format!("dimension mismatch: {} vs {}", x.ncols(), y.ncols())));
    }
    let (n, m) = (x.nrows(), y.nrows());
    let pooled = concatenate(Axis(0), &[x, y]).expect("matching columns");
    let total = n + m;
    let mut gram = vec![0.0; total * total];
    for i in 0..total {
        gram[i * total + i] = spec.eval_sq(0.0);
        for j in i + 1..total {
            let k = spec.eval_sq(sq_dist(pooled.row(i), pooled.row(j)));
            gram[i * total + j] = k;
            gram[j * total + i] = k;
        }
    }

    let stat = |labels: &[usize]| -> f64 {
        let (a, b) = labels.split_at(n);
        let block = |p: &[usize], q: &[usize]| -> f64 {
            p.iter().map(|&i| q.iter().map(|&j| gram[i * total + j]).sum::<f64>()).sum()
        };
        let (nf, mf) = (n as f64, m as f64);
        block(a, a) / (nf * nf) - 2.0 * block(a, b) / (nf * mf) + block(b, b) / (mf * mf)
    };

    let mut labels: Vec<usize> = (0..total).collect();
    let observed = stat(&labels);
    let permuted = (0..num_perms)
        .map(|_| {
            labels.shuffle(rng);
            stat(&labels)
        })
        .collect();
    Ok((observed, permuted))
}
