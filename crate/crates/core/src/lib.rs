//! Semi-Bayesian-nonparametric estimation of the maximum mean discrepancy (MMD)
//! between an unknown distribution, observed through a sample, and a model that
//! can only be simulated.
//!
//! The crate is organised around five layers:
//!
//! - [`dp`]: finite Dirichlet-process approximations (prior, posterior, random
//!   truncation, and a stick-breaking reference sampler).
//! - [`kernels`]: radial basis kernels, mixtures and the median heuristic.
//! - [`discrepancy`]: empirical and weighted MMD², weighted energy distance,
//!   gradients with respect to model points, and closed-form bounds.
//! - [`rb`]: the relative-belief goodness-of-fit test built on prior and
//!   posterior MMD draws.
//! - [`bench`] and [`gan`]: synthetic scenarios with ROC/AUC evaluation, and a
//!   small generator network trained against the posterior MMD.
//!
//! All randomness flows through explicitly seeded [`stream::Stream`] values.

pub mod bench;
pub mod cli;
pub mod discrepancy;
pub mod dp;
pub mod error;
pub mod gan;
pub mod kernels;
pub mod rb;
pub mod stream;

pub use error::{Error, Result};
