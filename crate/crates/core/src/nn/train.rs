use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamState};
use super::loss::cross_entropy_loss;
use super::mlp::{backward_trace, forward, forward_trace};
use super::params::ModelParams;
use crate::error::{FlekdError, Result};
use crate::rng::SimRng;

/// Yields shuffled mini-batch index slices covering `0..n`.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut SimRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// One pass of mini-batch Adam on cross-entropy. Returns the mean batch loss.
pub fn train_epoch_ce(
    params: &mut ModelParams,
    state: &mut AdamState,
    features: &Array2<f64>,
    labels: &[usize],
    batch_size: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    if features.nrows() == 0 {
        return Err(FlekdError::invalid("training on an empty dataset"));
    }
    let batches = shuffled_batches(features.nrows(), batch_size, rng);
    let mut total = 0.0;
    for idx in &batches {
        let x = features.select(Axis(0), idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let trace = forward_trace(params, x.view())?;
        let (loss, grad) = cross_entropy_loss(&trace.logits, &y)?;
        let grads = backward_trace(params, &trace, &grad)?;
        adam_step(params, &grads, state)?;
        total += loss;
    }
    Ok(total / batches.len() as f64)
}

/// Full-batch cross-entropy of `params` on a labeled matrix.
pub fn mean_ce(params: &ModelParams, features: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let logits = forward(params, features.view())?;
    Ok(cross_entropy_loss(&logits, labels)?.0)
}
