//! Empirical and Dirichlet-weighted discrepancies between point sets.
//!
//! All MMD estimators here are the biased V-statistic form, diagonal terms
//! included. Row sums are assembled in parallel but reduced in a fixed order,
//! so results do not depend on the thread count.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::kernels::{sq_dist, KernelSpec};

/// Pair count above which Gram assembly is split across threads.
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyKind {
    EmpiricalMmd2,
    WeightedMmd2,
    WeightedEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyValue {
    pub value: f64,
    pub kind: DiscrepancyKind,
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::input(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

fn check_nonempty(rows: usize, what: &str) -> Result<()> {
    if rows == 0 {
        return Err(Error::input(format!("{what} must have at least one row")));
    }
    Ok(())
}

/// Sum over rows of `f(i)`, evaluated in parallel for large inputs and reduced
/// in index order.
fn ordered_row_sum(rows: usize, cost: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    if cost >= PAR_THRESHOLD {
        let parts: Vec<f64> = (0..rows).into_par_iter().map(&f).collect();
        parts.iter().sum()
    } else {
        (0..rows).map(f).sum()
    }
}

/// `sum_{i,j} wa_i wb_j g(||a_i - b_j||^2)`.
fn cross_sum(
    a: ArrayView2<'_, f64>,
    wa: &[f64],
    b: ArrayView2<'_, f64>,
    wb: &[f64],
    g: impl Fn(f64) -> f64 + Sync,
) -> f64 {
    ordered_row_sum(a.nrows(), a.nrows() * b.nrows(), |i| {
        let ai = a.row(i);
        let inner: f64 = b.rows().into_iter().zip(wb).map(|(bj, w)| w * g(sq_dist(ai, bj))).sum();
        wa[i] * inner
    })
}

/// `sum_{i,j} w_i w_j g(||a_i - a_j||^2)` using symmetry.
fn self_sum(a: ArrayView2<'_, f64>, w: &[f64], g: impl Fn(f64) -> f64 + Sync) -> f64 {
    let n = a.nrows();
    let g0 = g(0.0);
    let diag: f64 = w.iter().map(|wi| wi * wi * g0).sum();
    let off = ordered_row_sum(n, n * n / 2, |i| {
        let ai = a.row(i);
        let inner: f64 = (i + 1..n).map(|j| w[j] * g(sq_dist(ai, a.row(j)))).sum();
        w[i] * inner
    });
    diag + 2.0 * off
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Biased empirical `MMD^2` between the rows of `x` and of `y`.
pub fn mmd2_empirical(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, spec: &KernelSpec) -> Result<f64> {
    check_nonempty(x.nrows(), "X")?;
    check_nonempty(y.nrows(), "Y")?;
    check_dims(x.ncols(), y.ncols())?;
    let (wx, wy) = (uniform(x.nrows()), uniform(y.nrows()));
    let k = |r2| spec.eval_sq(r2);
    let xx = self_sum(x, &wx, k);
    let xy = cross_sum(x, &wx, y, &wy, k);
    let yy = self_sum(y, &wy, k);
    Ok(xx - 2.0 * xy + yy)
}

/// `MMD^2` between a weighted atomic measure `P` and the empirical measure of
/// `y`. With `P` a prior (posterior) DP draw this is the prior (posterior)
/// semi-BNP estimator.
pub fn mmd2_weighted(p: &DiscreteMeasure, y: ArrayView2<'_, f64>, spec: &KernelSpec) -> Result<f64> {
    ModelSample::new(y, spec)?.mmd2(p)
}

/// A fixed model sample with its kernel self-term cached, for repeated
/// evaluation against many weighted measures.
#[derive(Debug, Clone)]
pub struct ModelSample<'a> {
    y: ArrayView2<'a, f64>,
    spec: &'a KernelSpec,
    yy: f64,
}

impl<'a> ModelSample<'a> {
    pub fn new(y: ArrayView2<'a, f64>, spec: &'a KernelSpec) -> Result<Self> {
        check_nonempty(y.nrows(), "Y")?;
        let yy = self_sum(y, &uniform(y.nrows()), |r2| spec.eval_sq(r2));
        Ok(Self { y, spec, yy })
    }

    /// `(1/m^2) sum k(Y_s, Y_t)`.
    pub fn self_term(&self) -> f64 {
        self.yy
    }

    pub fn mmd2(&self, p: &DiscreteMeasure) -> Result<f64> {
        check_dims(p.dim(), self.y.ncols())?;
        let k = |r2| self.spec.eval_sq(r2);
        let w = p.weights();
        let vv = self_sum(p.atoms(), w, k);
        let vy = cross_sum(p.atoms(), w, self.y, &uniform(self.y.nrows()), k);
        Ok(vv - 2.0 * vy + self.yy)
    }
}

/// Energy distance between a weighted atomic measure and the empirical measure of `y`.
pub fn energy_weighted(p: &DiscreteMeasure, y: ArrayView2<'_, f64>) -> Result<f64> {
    check_nonempty(y.nrows(), "Y")?;
    check_dims(p.dim(), y.ncols())?;
    let dist = |r2: f64| r2.sqrt();
    let w = p.weights();
    let wy = uniform(y.nrows());
    let vy = cross_sum(p.atoms(), w, y, &wy, dist);
    let vv = self_sum(p.atoms(), w, dist);
    let yy = self_sum(y, &wy, dist);
    Ok(2.0 * vy - vv - yy)
}

/// Gradient of [`mmd2_weighted`] with respect to each row of `y`.
pub fn grad_mmd2_atoms(p: &DiscreteMeasure, y: ArrayView2<'_, f64>, spec: &KernelSpec) -> Result<Array2<f64>> {
    mmd2_weighted_with_grad(p, y, spec).map(|(_, g)| g)
}

/// Value and gradient of [`mmd2_weighted`] in one pass.
pub fn mmd2_weighted_with_grad(
    p: &DiscreteMeasure,
    y: ArrayView2<'_, f64>,
    spec: &KernelSpec,
) -> Result<(f64, Array2<f64>)> {
    check_nonempty(y.nrows(), "Y")?;
    check_dims(p.dim(), y.ncols())?;
    let (m, d) = (y.nrows(), y.ncols());
    let mf = m as f64;
    let atoms = p.atoms();
    let w = p.weights();

    // Row t carries (cross term value, self term value, gradient row).
    let row = |t: usize| -> (f64, f64, Vec<f64>) {
        let yt = y.row(t);
        let mut g = vec![0.0; d];
        let mut cross = 0.0;
        for (v, &wl) in atoms.rows().into_iter().zip(w) {
            let r2 = sq_dist(v, yt);
            cross += wl * spec.eval_sq(r2);
            let c = -2.0 / mf * wl * spec.grad_coef_sq(r2);
            axpy_diff(&mut g, c, v, yt);
        }
        let mut own = 0.0;
        for s in 0..m {
            let ys = y.row(s);
            let r2 = sq_dist(ys, yt);
            own += spec.eval_sq(r2);
            if s != t {
                let c = 2.0 / (mf * mf) * spec.grad_coef_sq(r2);
                axpy_diff(&mut g, c, ys, yt);
            }
        }
        (cross / mf, own / (mf * mf), g)
    };
    let rows: Vec<(f64, f64, Vec<f64>)> = if m * (m + atoms.nrows()) >= PAR_THRESHOLD {
        (0..m).into_par_iter().map(row).collect()
    } else {
        (0..m).map(row).collect()
    };

    let vv = self_sum(atoms, w, |r2| spec.eval_sq(r2));
    let mut vy = 0.0;
    let mut yy = 0.0;
    let mut grad = Array2::zeros((m, d));
    for (t, (c, o, g)) in rows.into_iter().enumerate() {
        vy += c;
        yy += o;
        grad.row_mut(t).iter_mut().zip(g).for_each(|(dst, src)| *dst = src);
    }
    Ok((vv - 2.0 * vy + yy, grad))
}

#[inline]
fn axpy_diff(g: &mut [f64], c: f64, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    if c == 0.0 {
        return;
    }
    for ((gi, ai), bi) in g.iter_mut().zip(a.iter()).zip(b.iter()) {
        *gi += c * (ai - bi);
    }
}

/// Square-root loss `sqrt(max(mmd2, floor))` and the chain factor
/// `1 / (2 sqrt(max(mmd2, floor)))`; the flag reports whether the floor was hit.
pub fn sqrt_loss(mmd2: f64, floor: f64) -> (f64, f64, bool) {
    let clamped = mmd2 < floor;
    let v = mmd2.max(floor);
    let root = v.sqrt();
    (root, 0.5 / root, clamped)
}

/// Upper bound on the expected prior estimator: `MMD^2(H, F2) + 3K`.
pub fn bound_theorem1(kernel_bound: f64, mmd2_base_model: f64) -> f64 {
    mmd2_base_model + 3.0 * kernel_bound
}

/// Generalization bound on the expected MMD of the fitted generator, with an
/// optional Huber contamination rate adding `4 eps`.
pub fn bound_lemma4(
    a: f64,
    n: usize,
    n_terms: usize,
    kernel_bound: f64,
    mmd_opt: f64,
    contamination: Option<f64>,
) -> Result<f64> {
    if n == 0 || n_terms == 0 {
        return Err(Error::param("n and N must be positive"));
    }
    if a < 0.0 || kernel_bound <= 0.0 {
        return Err(Error::param("a must be >= 0 and K > 0"));
    }
    let (nf, nt, k) = (n as f64, n_terms as f64, kernel_bound);
    let mut bound = mmd_opt
        + 2.0 * k / nf.sqrt()
        + 4.0 * a * k / (a + nf)
        + 2.0 * ((a + nf + nt) * k / ((a + nf + 1.0) * nt)).sqrt();
    if let Some(eps) = contamination {
        bound += 4.0 * eps;
    }
    Ok(bound)
}

/// Tail bound `2 exp(-eps^2 n m / (2 K (n + m)))`.
pub fn bound_lemma5_tail(n: usize, m: usize, kernel_bound: f64, eps: f64) -> Result<f64> {
    if n == 0 || m == 0 || !(kernel_bound > 0.0) || !(eps > 0.0) {
        return Err(Error::param("n, m, K and eps must all be positive"));
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok(2.0 * (-(eps * eps) * nf * mf / (2.0 * kernel_bound * (nf + mf))).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{eval_kernel, Family, KernelComponent};
    use crate::stream::seeded;
    use ndarray::array;
    use rand::Rng;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    fn random_measure(n: usize, d: usize, seed: u64) -> DiscreteMeasure {
        let mut rng = seeded(seed);
        let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        DiscreteMeasure::new(w, rand_matrix(n, d, seed + 1000)).unwrap()
    }

    /// Straight double loops over the three terms (test oracle).
    fn brute_weighted(p: &DiscreteMeasure, y: &Array2<f64>, spec: &KernelSpec) -> f64 {
        let w = p.weights();
        let m = y.nrows() as f64;
        let mut t1 = 0.0;
        for l in 0..p.len() {
            for t in 0..p.len() {
                t1 += w[l] * w[t] * eval_kernel(spec, p.atom(l), p.atom(t)).unwrap();
            }
        }
        let mut t2 = 0.0;
        for l in 0..p.len() {
            for t in 0..y.nrows() {
                t2 += w[l] * eval_kernel(spec, p.atom(l), y.row(t)).unwrap();
            }
        }
        let mut t3 = 0.0;
        for l in 0..y.nrows() {
            for t in 0..y.nrows() {
                t3 += eval_kernel(spec, y.row(l), y.row(t)).unwrap();
            }
        }
        t1 - 2.0 / m * t2 + t3 / (m * m)
    }

    #[test]
    fn identical_samples_have_zero_mmd() {
        let x = rand_matrix(9, 3, 1);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        assert!(mmd2_empirical(x.view(), x.view(), &spec).unwrap().abs() < 1e-12);
    }

    #[test]
    fn scalar_hand_example() {
        let spec = KernelSpec::gaussian(2f64.sqrt()).unwrap();
        let v = mmd2_empirical(array![[0.0]].view(), array![[2.0]].view(), &spec).unwrap();
        assert!((v - (2.0 - 2.0 * (-1f64).exp())).abs() < 1e-14);
        assert!((v - 1.264241).abs() < 1e-6);
    }

    #[test]
    fn empirical_is_symmetric() {
        let x = rand_matrix(5, 2, 2);
        let y = rand_matrix(8, 2, 3);
        let spec = KernelSpec::gaussian(0.7).unwrap();
        let a = mmd2_empirical(x.view(), y.view(), &spec).unwrap();
        let b = mmd2_empirical(y.view(), x.view(), &spec).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a >= -1e-12);
    }

    #[test]
    fn weighted_hand_example() {
        let spec = KernelSpec::gaussian(2f64.sqrt()).unwrap();
        let p = DiscreteMeasure::new(vec![0.75, 0.25], array![[0.0], [2.0]]).unwrap();
        let v = mmd2_weighted(&p, array![[0.0]].view(), &spec).unwrap();
        let e = (-1f64).exp();
        let expected = (0.5625 + 0.0625 + 2.0 * 0.1875 * e) - 2.0 * (0.75 + 0.25 * e) + 1.0;
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.079015).abs() < 1e-6);
    }

    #[test]
    fn weighted_single_atom_at_model_point() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let p = DiscreteMeasure::new(vec![1.0], array![[0.0]]).unwrap();
        assert_eq!(mmd2_weighted(&p, array![[0.0]].view(), &spec).unwrap(), 0.0);
    }

    #[test]
    fn uniform_weights_reduce_to_empirical() {
        let spec = KernelSpec::gaussian_mixture(&[0.5, 2.0]).unwrap();
        for seed in 0..20 {
            let x = rand_matrix(6 + seed as usize, 2, seed);
            let y = rand_matrix(7, 2, seed + 100);
            let p = DiscreteMeasure::uniform(x.clone()).unwrap();
            let a = mmd2_weighted(&p, y.view(), &spec).unwrap();
            let b = mmd2_empirical(x.view(), y.view(), &spec).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_matches_brute_force_including_parallel_path() {
        let spec = KernelSpec::new(vec![
            KernelComponent::new(Family::Matern, 1.2, None).unwrap(),
            KernelComponent::new(Family::RationalQuadratic, 0.4, Some(2.0)).unwrap(),
        ])
        .unwrap();
        for (n, m) in [(4, 3), (90, 80)] {
            let p = random_measure(n, 3, n as u64);
            let y = rand_matrix(m, 3, 77);
            let v = mmd2_weighted(&p, y.view(), &spec).unwrap();
            assert!((v - brute_weighted(&p, &y, &spec)).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let x = rand_matrix(3, 2, 1);
        let y = rand_matrix(3, 3, 2);
        assert!(matches!(mmd2_empirical(x.view(), y.view(), &spec), Err(Error::InvalidInput(_))));
        let p = DiscreteMeasure::uniform(x).unwrap();
        assert!(mmd2_weighted(&p, y.view(), &spec).is_err());
        assert!(energy_weighted(&p, y.view()).is_err());
        assert!(grad_mmd2_atoms(&p, y.view(), &spec).is_err());
    }

    #[test]
    fn energy_examples() {
        let p = DiscreteMeasure::new(vec![1.0], array![[1.5, -1.0]]).unwrap();
        assert_eq!(energy_weighted(&p, array![[1.5, -1.0]].view()).unwrap(), 0.0);

        let p = DiscreteMeasure::uniform(array![[0.0], [2.0]]).unwrap();
        assert!(energy_weighted(&p, array![[0.0], [2.0]].view()).unwrap().abs() < 1e-12);

        let p = DiscreteMeasure::new(vec![0.5, 0.5], array![[0.0], [2.0]]).unwrap();
        let v = energy_weighted(&p, array![[1.0]].view()).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_matched_single_point() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let p = DiscreteMeasure::new(vec![1.0], array![[0.3, 0.4]]).unwrap();
        let g = grad_mmd2_atoms(&p, array![[0.3, 0.4]].view(), &spec).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    fn fd_check(spec: &KernelSpec, seed: u64) {
        let p = random_measure(6, 2, seed);
        let y = rand_matrix(5, 2, seed + 50);
        let g = grad_mmd2_atoms(&p, y.view(), spec).unwrap();
        let h = 1e-5;
        for t in 0..y.nrows() {
            for c in 0..y.ncols() {
                let mut yp = y.clone();
                yp[[t, c]] += h;
                let mut ym = y.clone();
                ym[[t, c]] -= h;
                let fd = (mmd2_weighted(&p, yp.view(), spec).unwrap()
                    - mmd2_weighted(&p, ym.view(), spec).unwrap())
                    / (2.0 * h);
                let rel = (g[[t, c]] - fd).abs() / g[[t, c]].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "{spec} entry ({t},{c}): analytic {} fd {fd}", g[[t, c]]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..100 {
            let spec = match seed % 4 {
                0 => KernelSpec::gaussian_mixture(&[0.5, 1.0, 3.0]).unwrap(),
                1 => KernelSpec::new(vec![KernelComponent::new(Family::Exponential, 1.0, None).unwrap()]).unwrap(),
                2 => KernelSpec::new(vec![KernelComponent::new(Family::RationalQuadratic, 0.8, None).unwrap()]).unwrap(),
                _ => KernelSpec::new(vec![KernelComponent::new(Family::Matern, 1.1, Some(2.5)).unwrap()]).unwrap(),
            };
            fd_check(&spec, seed);
        }
    }

    #[test]
    fn sqrt_loss_gradient_matches_finite_differences() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let p = random_measure(7, 2, 9);
        let y = rand_matrix(6, 2, 10);
        let (mmd2, g) = mmd2_weighted_with_grad(&p, y.view(), &spec).unwrap();
        let (_, scale, clamped) = sqrt_loss(mmd2, 1e-12);
        assert!(!clamped);
        let loss = |y: &Array2<f64>| mmd2_weighted(&p, y.view(), &spec).unwrap().max(1e-12).sqrt();
        let h = 1e-5;
        for t in 0..y.nrows() {
            for c in 0..2 {
                let mut yp = y.clone();
                yp[[t, c]] += h;
                let mut ym = y.clone();
                ym[[t, c]] -= h;
                let fd = (loss(&yp) - loss(&ym)) / (2.0 * h);
                let an = scale * g[[t, c]];
                assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn value_from_gradient_pass_matches_plain_value() {
        let spec = KernelSpec::gaussian(0.9).unwrap();
        let p = random_measure(40, 3, 3);
        let y = rand_matrix(70, 3, 4);
        let (v, _) = mmd2_weighted_with_grad(&p, y.view(), &spec).unwrap();
        assert!((v - mmd2_weighted(&p, y.view(), &spec).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sqrt_loss_floor() {
        let (l, s, c) = sqrt_loss(-1e-3, 1e-12);
        assert!(c);
        assert_eq!(l, 1e-6);
        assert_eq!(s, 0.5e6);
    }

    #[test]
    fn prior_support_bound_arithmetic() {
        assert_eq!(bound_theorem1(1.0, 0.0), 3.0);
        assert_eq!(bound_theorem1(6.0, 0.5), 18.5);
    }

    #[test]
    fn expected_mmd_bound_values() {
        let b = bound_lemma4(0.0, 100, 100, 6.0, 0.0, None).unwrap();
        let expected = 1.2 + 2.0 * (1200.0f64 / 10100.0).sqrt();
        assert!((b - expected).abs() < 1e-14);
        assert!((b - 1.889382).abs() < 1e-6);
        let c = bound_lemma4(0.0, 100, 100, 6.0, 0.0, Some(0.1)).unwrap();
        assert!((c - b - 0.4).abs() < 1e-14);
        assert!(bound_lemma4(0.0, 0, 100, 6.0, 0.0, None).is_err());
        assert!(bound_lemma4(0.0, 10, 0, 6.0, 0.0, None).is_err());
    }

    #[test]
    fn deviation_tail_values() {
        let v = bound_lemma5_tail(100, 100, 1.0, 0.5).unwrap();
        assert!((v - 2.0 * (-6.25f64).exp()).abs() < 1e-15);
        assert!((v - 0.0038609).abs() < 1e-6);
        let tiny = bound_lemma5_tail(100, 100, 1.0, 1e-9).unwrap();
        assert!((tiny - 2.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let b = bound_lemma5_tail(50, 80, 2.0, i as f64 * 0.05).unwrap();
            assert!(b < prev);
            prev = b;
        }
        assert!(bound_lemma5_tail(0, 1, 1.0, 0.1).is_err());
        assert!(bound_lemma5_tail(1, 1, 0.0, 0.1).is_err());
        assert!(bound_lemma5_tail(1, 1, 1.0, 0.0).is_err());
    }
}
