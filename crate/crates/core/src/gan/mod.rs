//! A small MLP generator trained by minimizing the square root of the
//! posterior MMD against minibatches, plus scoring and data loading.

pub mod data;
mod idx;
mod mmds;
mod net;
mod train;

pub use idx::{encode_idx_images, load_idx_images, parse_idx_images, write_idx_images};
pub use mmds::{mmds_score, mmds_with_indices};
pub use net::{generator_forward, uniform_noise, ForwardCache, GeneratorNet};
pub use train::{
    draw_loss_inputs, loss_and_grad, loss_and_grad_at, train, AdamConfig, Checkpoint, LossDraw, LossEval,
    TrainConfig, TrainHistory,
};
