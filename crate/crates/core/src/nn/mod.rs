//! Fixed-architecture MLP engine: a 3-layer ReLU network with analytic
//! gradients, temperature softmax, cross-entropy and distillation losses,
//! and Adam with step decay. Everything is `f64`.

mod adam;
mod loss;
mod mlp;
mod params;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{cross_entropy_loss, kl_distill_loss, softmax_rows, softmax_temp};
pub use mlp::{backward, backward_trace, forward, forward_trace, ForwardTrace, Logits};
pub use params::{init_params, Dense, ModelDims, ModelParams};
pub use train::{mean_ce, shuffled_batches, train_epoch_ce};

/// Hidden width used throughout the experiments.
pub const DEFAULT_HIDDEN: usize = 128;
