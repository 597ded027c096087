//! Minibatch training against the square-root posterior MMD.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mmds::mmds_score;
use super::net::{uniform_noise, GeneratorNet};
use crate::discrepancy::{mmd2_weighted_with_grad, sqrt_loss};
use crate::dp::{resolve_terms, sample_dp_posterior, DiscreteMeasure, PosteriorParams, Sampler, Truncation, DEFAULT_MAX_TERMS};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::stream::{fork_root, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    /// Prior concentration; 0 gives the non-informative posterior `DP(n_mb, F_n)`.
    pub concentration: f64,
    pub truncation: Truncation,
    pub max_terms: usize,
    pub kernel: KernelSpec,
    pub adam: AdamConfig,
    pub sqrt_floor: f64,
    /// Base measure, required when `concentration > 0`.
    pub base: Option<Arc<dyn Sampler>>,
    /// Record an MMDS checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_reps: usize,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl fmt::Debug for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrainConfig")
            .field("batch_size", &self.batch_size)
            .field("iterations", &self.iterations)
            .field("concentration", &self.concentration)
            .field("truncation", &self.truncation)
            .field("kernel", &self.kernel.to_string())
            .field("adam", &self.adam)
            .field("sqrt_floor", &self.sqrt_floor)
            .field("base", &self.base.is_some())
            .field("checkpoint_every", &self.checkpoint_every)
            .finish_non_exhaustive()
    }
}

impl TrainConfig {
    pub fn new(kernel: KernelSpec) -> Self {
        Self {
            batch_size: 256,
            iterations: 2000,
            concentration: 0.0,
            truncation: Truncation::Epsilon(1e-3),
            max_terms: DEFAULT_MAX_TERMS,
            kernel,
            adam: AdamConfig::default(),
            sqrt_floor: 1e-12,
            base: None,
            checkpoint_every: 0,
            checkpoint_reps: 5,
            divergence_factor: 10.0,
            divergence_patience: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::param("batch size and iteration count must be positive"));
        }
        if !(self.sqrt_floor > 0.0) {
            return Err(Error::param("sqrt_floor must be > 0"));
        }
        if !(self.concentration >= 0.0 && self.concentration.is_finite()) {
            return Err(Error::param("concentration must be >= 0"));
        }
        if self.concentration > 0.0 && self.base.is_none() {
            return Err(Error::param("a > 0 requires a base sampler"));
        }
        self.truncation.validate()?;
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::param(format!("invalid optimizer settings {a:?}")));
        }
        Ok(())
    }
}

/// Random inputs of one loss evaluation: the posterior draw and the noise fed
/// to the generator. Keeping them fixed makes the loss a deterministic
/// function of the parameters.
#[derive(Debug, Clone)]
pub struct LossDraw {
    pub posterior: DiscreteMeasure,
    pub noise: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub mmd2: f64,
    /// `mmd2` was below the floor; the gradient is taken at the floor.
    pub clamped: bool,
    pub n_terms: usize,
    pub grad: Vec<f64>,
}

/// Draw `N` from the stopping rule at concentration `a + n_mb`, a posterior
/// measure given the minibatch, and `N` noise rows.
pub fn draw_loss_inputs<R: Rng + ?Sized>(
    net: &GeneratorNet,
    x_mb: &Array2<f64>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossDraw> {
    if x_mb.ncols() != net.output_dim() {
        return Err(Error::input(format!(
            "data has {} columns but the generator outputs {}",
            x_mb.ncols(),
            net.output_dim()
        )));
    }
    let post = PosteriorParams::new(cfg.concentration, Arc::new(x_mb.clone()), cfg.base.clone())?;
    let n_terms = resolve_terms(post.concentration, cfg.truncation, cfg.max_terms, rng)?.n_terms;
    let posterior = sample_dp_posterior(&post, n_terms, rng)?;
    let noise = uniform_noise(n_terms, net.input_dim(), rng);
    Ok(LossDraw { posterior, noise })
}

/// Loss and parameter gradient at fixed random inputs.
pub fn loss_and_grad_at(net: &GeneratorNet, draw: &LossDraw, cfg: &TrainConfig) -> Result<LossEval> {
    let cache = net.forward_cached(draw.noise.view())?;
    let (mmd2, grad_y) = mmd2_weighted_with_grad(&draw.posterior, cache.output().view(), &cfg.kernel)?;
    let (loss, scale, clamped) = sqrt_loss(mmd2, cfg.sqrt_floor);
    let grad = net.backward(&cache, (grad_y * scale).view())?;
    Ok(LossEval { loss, mmd2, clamped, n_terms: draw.noise.nrows(), grad })
}

/// `sqrt(max(MMD²_BNP, floor))` between a posterior draw given the minibatch
/// and `N` generated points, with its gradient.
pub fn loss_and_grad<R: Rng + ?Sized>(
    net: &GeneratorNet,
    x_mb: &Array2<f64>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossEval> {
    let draw = draw_loss_inputs(net, x_mb, cfg, rng)?;
    loss_and_grad_at(net, &draw, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub mmds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub n_terms: Vec<usize>,
    pub clamped: Vec<bool>,
    pub checkpoints: Vec<Checkpoint>,
}

struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, len: usize) -> Self {
        Self { cfg, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Run `cfg.iterations` steps of minibatch training. Training randomness and
/// checkpoint scoring use separate sub-streams, so enabling checkpoints does
/// not change the trained parameters.
pub fn train<R: Rng + ?Sized>(
    mut net: GeneratorNet,
    data: &Array2<f64>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(GeneratorNet, TrainHistory)> {
    cfg.validate()?;
    let n = data.nrows();
    if cfg.batch_size > n {
        return Err(Error::param(format!("batch size {} exceeds dataset size {n}", cfg.batch_size)));
    }
    if data.ncols() != net.output_dim() {
        return Err(Error::input(format!(
            "data has {} columns but the generator outputs {}",
            data.ncols(),
            net.output_dim()
        )));
    }
    let root = fork_root(rng);
    let mut rng = substream(root, 0);
    let mut ck_rng = substream(root, 1);
    let mut adam = Adam::new(cfg.adam, net.params().len());
    let mut history = TrainHistory::default();
    let mut over = 0usize;

    for it in 0..cfg.iterations {
        let rows = index::sample(&mut rng, n, cfg.batch_size).into_vec();
        let x_mb = data.select(Axis(0), &rows);
        let eval = loss_and_grad(&net, &x_mb, cfg, &mut rng)?;
        if !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it, loss: eval.loss });
        }
        let initial = history.loss.first().copied().unwrap_or(eval.loss);
        if eval.loss > cfg.divergence_factor * initial {
            over += 1;
            if over >= cfg.divergence_patience {
                return Err(Error::Diverged { iteration: it, loss: eval.loss });
            }
        } else {
            over = 0;
        }
        history.loss.push(eval.loss);
        history.grad_norm.push(eval.grad.iter().map(|g| g * g).sum::<f64>().sqrt());
        history.n_terms.push(eval.n_terms);
        history.clamped.push(eval.clamped);
        adam.step(net.params_mut(), &eval.grad);

        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            let nmb = cfg.batch_size.min(n);
            let generated = net.forward(uniform_noise(n, net.input_dim(), &mut ck_rng).view())?;
            let mmds = mmds_score(data, &generated, nmb, cfg.checkpoint_reps.max(1), &cfg.kernel, &mut ck_rng)?;
            history.checkpoints.push(Checkpoint { iteration: it + 1, mmds });
        }
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::SmoothedEmpiricalSampler;
    use crate::gan::data::eight_gaussians;
    use crate::stream::seeded;

    fn mixture() -> KernelSpec {
        KernelSpec::gaussian_mixture(&[0.05, 0.2, 1.0]).unwrap()
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(1);
        let cfg = TrainConfig::new(mixture());
        let data = eight_gaussians(64, &mut rng);
        for trial in 0..5 {
            let net = GeneratorNet::init(&[2, 8, 8, 8, 8, 2], &mut rng).unwrap();
            let draw = draw_loss_inputs(&net, &data, &cfg, &mut rng).unwrap();
            let eval = loss_and_grad_at(&net, &draw, &cfg).unwrap();
            let h = 1e-4;
            let relu_pattern = |n: &GeneratorNet| -> Vec<bool> {
                let c = n.forward_cached(draw.noise.view()).unwrap();
                c.activations[1..c.activations.len() - 1].iter().flat_map(|a| a.iter().map(|v| *v > 0.0)).collect()
            };
            for k in 0..net.params().len() {
                let mut p = net.clone();
                p.params_mut()[k] += h;
                let mut m = net.clone();
                m.params_mut()[k] -= h;
                // Straddling a ReLU kink, the quotient is not a derivative.
                if relu_pattern(&p) != relu_pattern(&m) {
                    continue;
                }
                let fd = (loss_and_grad_at(&p, &draw, &cfg).unwrap().loss - loss_and_grad_at(&m, &draw, &cfg).unwrap().loss)
                    / (2.0 * h);
                if eval.grad[k].abs().max(fd.abs()) < 1e-9 {
                    continue;
                }
                assert!(relative_error(eval.grad[k], fd) < 1e-3, "trial {trial} param {k}: {} vs {fd}", eval.grad[k]);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_floor_is_reported() {
        let mut rng = seeded(2);
        let cfg = TrainConfig::new(mixture());
        let data = eight_gaussians(32, &mut rng);
        let net = GeneratorNet::init(&[3, 8, 2], &mut rng).unwrap();
        let eval = loss_and_grad(&net, &data, &cfg, &mut rng).unwrap();
        assert!(eval.loss >= 0.0);
        assert!(!eval.clamped);
        assert_eq!(eval.grad.len(), net.params().len());
    }

    #[test]
    fn matched_points_sit_at_the_floor() {
        // A 1-layer net whose outputs equal the posterior atoms exactly.
        let net = GeneratorNet::zeros(&[1, 1]).unwrap();
        let draw = LossDraw {
            posterior: DiscreteMeasure::uniform(Array2::from_elem((4, 1), 0.5)).unwrap(),
            noise: Array2::zeros((4, 1)),
        };
        let cfg = TrainConfig::new(mixture());
        let eval = loss_and_grad_at(&net, &draw, &cfg).unwrap();
        assert!(eval.clamped);
        assert!((eval.loss - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn training_is_deterministic_and_makes_progress() {
        let data = eight_gaussians(512, &mut seeded(3));
        let mut cfg = TrainConfig::new(mixture());
        cfg.batch_size = 64;
        cfg.iterations = 300;
        cfg.adam.learning_rate = 5e-3;
        cfg.checkpoint_every = 100;
        let net = GeneratorNet::init(&[2, 16, 16, 2], &mut seeded(4)).unwrap();
        let (a, ha) = train(net.clone(), &data, &cfg, &mut seeded(5)).unwrap();
        let (b, hb) = train(net, &data, &cfg, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.loss.len(), 300);
        assert_eq!(ha.checkpoints.len(), 3);
        let median = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s[s.len() / 2]
        };
        assert!(median(&ha.loss[270..]) < median(&ha.loss[..30]));
    }

    #[test]
    fn checkpoints_do_not_change_training() {
        let data = eight_gaussians(128, &mut seeded(6));
        let mut cfg = TrainConfig::new(mixture());
        cfg.batch_size = 32;
        cfg.iterations = 20;
        let net = GeneratorNet::init(&[2, 8, 2], &mut seeded(7)).unwrap();
        let (a, _) = train(net.clone(), &data, &cfg, &mut seeded(8)).unwrap();
        cfg.checkpoint_every = 5;
        let (b, _) = train(net, &data, &cfg, &mut seeded(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn informative_prior_with_smoothed_base_runs() {
        let data = eight_gaussians(256, &mut seeded(9));
        let mut cfg = TrainConfig::new(mixture());
        cfg.batch_size = 64;
        cfg.iterations = 50;
        cfg.concentration = 64.0;
        cfg.base = Some(Arc::new(SmoothedEmpiricalSampler::new(data.clone(), 0.02).unwrap()));
        let net = GeneratorNet::init(&[2, 8, 2], &mut seeded(10)).unwrap();
        let (_, h) = train(net, &data, &cfg, &mut seeded(11)).unwrap();
        assert!(h.loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn divergence_guard_fires() {
        let data = eight_gaussians(64, &mut seeded(12));
        let mut cfg = TrainConfig::new(mixture());
        cfg.batch_size = 16;
        cfg.iterations = 50;
        // Any loss exceeds a factor of zero times the first one.
        cfg.divergence_factor = 0.0;
        cfg.divergence_patience = 10;
        let net = GeneratorNet::init(&[2, 4, 2], &mut seeded(13)).unwrap();
        match train(net, &data, &cfg, &mut seeded(14)) {
            Err(Error::Diverged { iteration, .. }) => assert_eq!(iteration, 9),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_errors() {
        let data = eight_gaussians(10, &mut seeded(15));
        let net = GeneratorNet::init(&[2, 4, 2], &mut seeded(16)).unwrap();
        let mut cfg = TrainConfig::new(mixture());
        cfg.batch_size = 11;
        assert!(train(net.clone(), &data, &cfg, &mut seeded(1)).is_err());
        let mut cfg = TrainConfig::new(mixture());
        cfg.sqrt_floor = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::new(mixture());
        cfg.concentration = 1.0;
        assert!(cfg.validate().is_err());
        let wrong = GeneratorNet::init(&[2, 4, 3], &mut seeded(16)).unwrap();
        assert!(train(wrong, &data, &TrainConfig::new(mixture()), &mut seeded(1)).is_err());
    }
}
