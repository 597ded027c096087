//! Radial basis kernels `k(x, y) = h(||x - y|| / sigma)` and finite mixtures of them.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default shape for the rational-quadratic family when none is given.
pub const DEFAULT_RQ_ALPHA: f64 = 1.0;
/// Default smoothness for the Matern family when none is given.
pub const DEFAULT_MATERN_NU: f64 = 1.5;
/// Value returned by the median heuristic when every cross-distance is zero.
pub const DEFAULT_MEDIAN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `exp(-u^2 / 2)`
    Gaussian,
    /// `exp(-u)`
    Exponential,
    /// `(1 + u^2 / (2 alpha))^(-alpha)`
    RationalQuadratic,
    /// `(1 + sqrt(2 nu) u) exp(-sqrt(2 nu) u)`
    Matern,
}

impl Family {
    fn default_shape(self) -> Option<f64> {
        match self {
            Family::RationalQuadratic => Some(DEFAULT_RQ_ALPHA),
            Family::Matern => Some(DEFAULT_MATERN_NU),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Exponential => "exponential",
            Family::RationalQuadratic => "rq",
            Family::Matern => "matern",
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "rbf" => Ok(Family::Gaussian),
            "exponential" | "laplace" => Ok(Family::Exponential),
            "rq" | "rational-quadratic" | "rational_quadratic" => Ok(Family::RationalQuadratic),
            "matern" => Ok(Family::Matern),
            other => Err(Error::param(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// One radial component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelComponent {
    pub family: Family,
    pub bandwidth: f64,
    pub shape: Option<f64>,
}

impl KernelComponent {
    pub fn new(family: Family, bandwidth: f64, shape: Option<f64>) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::param(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        if let Some(s) = shape {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::param(format!("shape must be > 0, got {s}")));
            }
        }
        Ok(Self { family, bandwidth, shape: shape.or(family.default_shape()) })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(Family::Gaussian, bandwidth, None)
    }

    fn shape_or_default(&self) -> f64 {
        self.shape.or(self.family.default_shape()).unwrap_or(1.0)
    }

    /// Kernel value given the squared distance `r2`.
    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        let s2 = self.bandwidth * self.bandwidth;
        match self.family {
            Family::Gaussian => (-0.5 * r2 / s2).exp(),
            Family::Exponential => (-(r2.sqrt()) / self.bandwidth).exp(),
            Family::RationalQuadratic => {
                let alpha = self.shape_or_default();
                (1.0 + r2 / (2.0 * alpha * s2)).powf(-alpha)
            }
            Family::Matern => {
                let c = (2.0 * self.shape_or_default()).sqrt();
                let cu = c * r2.sqrt() / self.bandwidth;
                (1.0 + cu) * (-cu).exp()
            }
        }
    }

    /// Coefficient `c(r2)` with `d k(x, y) / d y = c(r2) (x - y)`.
    ///
    /// The exponential family has a cusp at coincident points; the zero
    /// subgradient is used there.
    #[inline]
    pub fn grad_coef_sq(&self, r2: f64) -> f64 {
        let s2 = self.bandwidth * self.bandwidth;
        match self.family {
            Family::Gaussian => (-0.5 * r2 / s2).exp() / s2,
            Family::Exponential => {
                if r2 > 0.0 {
                    let r = r2.sqrt();
                    (-r / self.bandwidth).exp() / (self.bandwidth * r)
                } else {
                    0.0
                }
            }
            Family::RationalQuadratic => {
                let alpha = self.shape_or_default();
                (1.0 + r2 / (2.0 * alpha * s2)).powf(-alpha - 1.0) / s2
            }
            Family::Matern => {
                let c2 = 2.0 * self.shape_or_default();
                let cu = c2.sqrt() * r2.sqrt() / self.bandwidth;
                c2 * (-cu).exp() / s2
            }
        }
    }
}

/// A positive-definite kernel: the sum of one or more radial components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    components: Vec<KernelComponent>,
}

impl KernelSpec {
    pub fn new(components: Vec<KernelComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::param("a kernel needs at least one component"));
        }
        Ok(Self { components })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(vec![KernelComponent::gaussian(bandwidth)?])
    }

    /// Sum of Gaussian kernels, one per bandwidth.
    pub fn gaussian_mixture(bandwidths: &[f64]) -> Result<Self> {
        Self::new(bandwidths.iter().map(|&s| KernelComponent::gaussian(s)).collect::<Result<_>>()?)
    }

    pub fn components(&self) -> &[KernelComponent] {
        &self.components
    }

    /// Upper bound `K` on the kernel: the number of components.
    pub fn kernel_bound(&self) -> f64 {
        self.components.len() as f64
    }

    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        self.components.iter().map(|c| c.eval_sq(r2)).sum()
    }

    #[inline]
    pub fn grad_coef_sq(&self, r2: f64) -> f64 {
        self.components.iter().map(|c| c.grad_coef_sq(r2)).sum()
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|c| match c.shape {
                Some(s) if c.family != Family::Gaussian && c.family != Family::Exponential => {
                    format!("{}:{}:{}", c.family.name(), c.bandwidth, s)
                }
                _ => format!("{}:{}", c.family.name(), c.bandwidth),
            })
            .collect();
        if parts.len() == 1 {
            write!(f, "{}", parts[0])
        } else {
            write!(f, "mix[{}]", parts.join(";"))
        }
    }
}

#[inline]
pub(crate) fn sq_dist(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    match (x.as_slice(), y.as_slice()) {
        (Some(a), Some(b)) => a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum(),
        _ => x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum(),
    }
}

/// `k(x, y)` for the kernel described by `spec`.
pub fn eval_kernel(spec: &KernelSpec, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::input(format!("dimension mismatch: {} vs {}", x.len(), y.len())));
    }
    Ok(spec.eval_sq(sq_dist(x, y)))
}

/// Output of [`median_heuristic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianHeuristic {
    pub sigma: f64,
    /// Every cross-distance was zero and the floor was returned.
    pub degenerate: bool,
}

/// Median of the squared cross-distances `||X_i - Y_j||^2`, used directly as
/// a bandwidth.
pub fn median_heuristic(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<MedianHeuristic> {
    median_heuristic_with_floor(x, y, DEFAULT_MEDIAN_FLOOR)
}

pub fn median_heuristic_with_floor(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    floor: f64,
) -> Result<MedianHeuristic> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::input("median heuristic needs non-empty samples"));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::input(format!("dimension mismatch: {} vs {}", x.ncols(), y.ncols())));
    }
    let mut d: Vec<f64> = Vec::with_capacity(x.nrows() * y.nrows());
    for xi in x.rows() {
        for yj in y.rows() {
            d.push(sq_dist(xi, yj));
        }
    }
    let len = d.len();
    let mid = len / 2;
    let (_, upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if len % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median > 0.0 {
        Ok(MedianHeuristic { sigma: median, degenerate: false })
    } else {
        Ok(MedianHeuristic { sigma: floor, degenerate: true })
    }
}

/// A kernel as given on the command line: either fully specified, or a
/// single-component family whose bandwidth comes from the median heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Fixed(KernelSpec),
    Median { family: Family, shape: Option<f64> },
}

impl KernelChoice {
    /// The concrete kernel for samples `x` and `y`.
    pub fn resolve(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<KernelSpec> {
        match self {
            KernelChoice::Fixed(spec) => Ok(spec.clone()),
            KernelChoice::Median { family, shape } => {
                let mh = median_heuristic(x, y)?;
                KernelSpec::new(vec![KernelComponent::new(*family, mh.sigma, *shape)?])
            }
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::Fixed(spec) => spec.fmt(f),
            KernelChoice::Median { family, shape: Some(s) } => write!(f, "{}:median:{s}", family.name()),
            KernelChoice::Median { family, shape: None } => write!(f, "{}:median", family.name()),
        }
    }
}

impl From<KernelSpec> for KernelChoice {
    fn from(spec: KernelSpec) -> Self {
        KernelChoice::Fixed(spec)
    }
}

/// Parses `family:bandwidth[:shape]`, `family:median[:shape]` and
/// `mix:family:b1,b2,...`.
impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| -> Result<f64> {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::param(format!("cannot parse '{p}' as a number in kernel '{s}'")))
        };
        match parts.as_slice() {
            ["mix", family, list] | ["mixture", family, list] => {
                let family: Family = family.parse()?;
                let comps = list
                    .split(',')
                    .map(|b| KernelComponent::new(family, num(b)?, None))
                    .collect::<Result<Vec<_>>>()?;
                Ok(KernelChoice::Fixed(KernelSpec::new(comps)?))
            }
            [family, bw] | [family, bw, _] => {
                let family: Family = family.parse()?;
                let shape = parts.get(2).map(|p| num(p)).transpose()?;
                if bw.eq_ignore_ascii_case("median") {
                    Ok(KernelChoice::Median { family, shape })
                } else {
                    Ok(KernelChoice::Fixed(KernelSpec::new(vec![KernelComponent::new(
                        family,
                        num(bw)?,
                        shape,
                    )?])?))
                }
            }
            _ => Err(Error::param(format!(
                "cannot parse kernel '{s}' (expected family:bandwidth, family:median or mix:family:b1,b2,..)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::seeded;
    use ndarray::{array, Array1, Array2};
    use rand::Rng;

    fn all_families(bw: f64) -> Vec<KernelSpec> {
        [Family::Gaussian, Family::Exponential, Family::RationalQuadratic, Family::Matern]
            .into_iter()
            .map(|f| KernelSpec::new(vec![KernelComponent::new(f, bw, None).unwrap()]).unwrap())
            .collect()
    }

    #[test]
    fn self_similarity_is_one() {
        let x = array![0.3, -1.2, 4.0];
        for spec in all_families(1.7) {
            assert_eq!(eval_kernel(&spec, x.view(), x.view()).unwrap(), 1.0);
        }
    }

    #[test]
    fn gaussian_hand_value() {
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let v = eval_kernel(&spec, array![0.0, 0.0].view(), array![2.0, 0.0].view()).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn family_closed_forms() {
        // u = r / sigma = 1.5
        let (r2, s) = (2.25 * 4.0, 2.0);
        let u: f64 = 1.5;
        let e = KernelComponent::new(Family::Exponential, s, None).unwrap();
        assert!((e.eval_sq(r2) - (-u).exp()).abs() < 1e-15);
        let rq = KernelComponent::new(Family::RationalQuadratic, s, Some(2.0)).unwrap();
        assert!((rq.eval_sq(r2) - (1.0 + u * u / 4.0).powf(-2.0)).abs() < 1e-15);
        let m = KernelComponent::new(Family::Matern, s, Some(2.5)).unwrap();
        let c = 5.0f64.sqrt();
        assert!((m.eval_sq(r2) - (1.0 + c * u) * (-c * u).exp()).abs() < 1e-15);
    }

    #[test]
    fn mixture_is_bounded_by_component_count() {
        let spec = KernelSpec::gaussian_mixture(&[2.0, 5.0, 10.0, 20.0, 40.0, 80.0]).unwrap();
        assert_eq!(spec.kernel_bound(), 6.0);
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let x = Array1::from_shape_fn(3, |_| rng.random_range(-50.0..50.0));
            let y = Array1::from_shape_fn(3, |_| rng.random_range(-50.0..50.0));
            let v = eval_kernel(&spec, x.view(), y.view()).unwrap();
            assert!((0.0..=6.0).contains(&v));
        }
    }

    #[test]
    fn symmetric_and_bounded_on_random_pairs() {
        let mut rng = seeded(2);
        for spec in all_families(1.3) {
            for _ in 0..100_000 {
                let x = Array1::from_shape_fn(2, |_| rng.random_range(-5.0..5.0));
                let y = Array1::from_shape_fn(2, |_| rng.random_range(-5.0..5.0));
                let a = eval_kernel(&spec, x.view(), y.view()).unwrap();
                let b = eval_kernel(&spec, y.view(), x.view()).unwrap();
                assert_eq!(a, b);
                assert!((0.0..=spec.kernel_bound()).contains(&a));
            }
        }
    }

    #[test]
    fn monotone_decay_along_a_ray() {
        let origin = array![0.0, 0.0];
        for spec in all_families(0.8) {
            let mut prev = f64::INFINITY;
            for i in 0..400 {
                let t = i as f64 * 0.025;
                let y = array![t * 0.6, t * 0.8];
                let v = eval_kernel(&spec, origin.view(), y.view()).unwrap();
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    /// Smallest eigenvalue by Jacobi rotations (test-only).
    fn min_eigenvalue(mut a: Array2<f64>) -> f64 {
        let n = a.nrows();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[[p, q]] * a[[p, q]];
                }
            }
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[[i, i]]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn gram_matrices_are_positive_semidefinite() {
        let mut rng = seeded(3);
        let pts = Array2::from_shape_fn((50, 3), |_| rng.random_range(-2.0..2.0));
        for spec in all_families(1.0) {
            let gram = Array2::from_shape_fn((50, 50), |(i, j)| {
                eval_kernel(&spec, pts.row(i), pts.row(j)).unwrap()
            });
            let min = min_eigenvalue(gram);
            assert!(min >= -1e-8, "{spec}: min eigenvalue {min}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        assert!(matches!(
            eval_kernel(&spec, array![1.0].view(), array![1.0, 2.0].view()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn invalid_components_are_rejected() {
        assert!(KernelComponent::gaussian(0.0).is_err());
        assert!(KernelComponent::new(Family::Matern, 1.0, Some(-1.0)).is_err());
        assert!(KernelSpec::new(vec![]).is_err());
    }

    #[test]
    fn median_heuristic_hand_example() {
        let x = array![[0.0], [0.0]];
        let y = array![[3.0], [4.0]];
        let mh = median_heuristic(x.view(), y.view()).unwrap();
        assert_eq!(mh.sigma, 12.5);
        assert!(!mh.degenerate);
        let swapped = median_heuristic(y.view(), x.view()).unwrap();
        assert_eq!(swapped, mh);
    }

    #[test]
    fn median_heuristic_degenerate() {
        let x = array![[1.0, 2.0]];
        let mh = median_heuristic(x.view(), x.view()).unwrap();
        assert!(mh.degenerate);
        assert_eq!(mh.sigma, DEFAULT_MEDIAN_FLOOR);
    }

    #[test]
    fn median_heuristic_odd_count() {
        let x = array![[0.0]];
        let y = array![[1.0], [2.0], [3.0]];
        assert_eq!(median_heuristic(x.view(), y.view()).unwrap().sigma, 4.0);
    }

    #[test]
    fn parses_kernel_grammar() {
        let k: KernelChoice = "gaussian:80".parse().unwrap();
        assert_eq!(k, KernelChoice::Fixed(KernelSpec::gaussian(80.0).unwrap()));
        let k: KernelChoice = "mix:gaussian:2,5,10,20,40,80".parse().unwrap();
        match k {
            KernelChoice::Fixed(s) => assert_eq!(s.kernel_bound(), 6.0),
            _ => panic!(),
        }
        let k: KernelChoice = "gaussian:median".parse().unwrap();
        assert_eq!(k, KernelChoice::Median { family: Family::Gaussian, shape: None });
        let k: KernelChoice = "matern:2:2.5".parse().unwrap();
        match k {
            KernelChoice::Fixed(s) => assert_eq!(s.components()[0].shape, Some(2.5)),
            _ => panic!(),
        }
        assert!("gaussian".parse::<KernelChoice>().is_err());
        assert!("cosine:1".parse::<KernelChoice>().is_err());
        assert!("gaussian:-1".parse::<KernelChoice>().is_err());
    }
}
