use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Ring of eight Gaussians inside the unit square: centres on a circle of
/// radius 0.35 around (0.5, 0.5), standard deviation 0.02.
pub fn eight_gaussians<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let jitter = Normal::new(0.0, 0.02).expect("positive std");
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let k = rng.random_range(0..8) as f64;
        let theta = k * std::f64::consts::FRAC_PI_4;
        row[0] = (0.5 + 0.35 * theta.cos() + jitter.sample(rng)).clamp(0.0, 1.0);
        row[1] = (0.5 + 0.35 * theta.sin() + jitter.sample(rng)).clamp(0.0, 1.0);
    }
    out
}

/// Uniform points in the unit cube: the "no learning" reference for scores.
pub fn uniform_baseline<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
}
