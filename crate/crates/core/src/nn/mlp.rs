use ndarray::{Array2, ArrayView2, Axis};

use super::params::{Dense, ModelParams};
use crate::error::{FlekdError, Result};

/// Raw class scores, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Array2<f64>);

impl Logits {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FlekdError::invalid("logits contain non-finite values"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    /// Index of the largest score per row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array2<f64>,
    hidden1: Array2<f64>,
    hidden2: Array2<f64>,
    pub logits: Logits,
}

fn affine(layer: &Dense, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.dot(&layer.weight.t());
    out += &layer.bias;
    out
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn check_batch(params: &ModelParams, batch: &ArrayView2<'_, f64>) -> Result<()> {
    let expected = params.dims().input_dim;
    if batch.ncols() != expected {
        return Err(FlekdError::invalid(format!(
            "batch has {} columns, model expects {expected}",
            batch.ncols()
        )));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, batch: ArrayView2<'_, f64>) -> Result<Logits> {
    check_batch(params, &batch)?;
    let mut h = affine(&params.layers[0], batch);
    relu_inplace(&mut h);
    let mut h2 = affine(&params.layers[1], h.view());
    relu_inplace(&mut h2);
    Ok(Logits(affine(&params.layers[2], h2.view())))
}

pub fn forward_trace(params: &ModelParams, batch: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
    check_batch(params, &batch)?;
    let mut hidden1 = affine(&params.layers[0], batch);
    relu_inplace(&mut hidden1);
    let mut hidden2 = affine(&params.layers[1], hidden1.view());
    relu_inplace(&mut hidden2);
    let logits = Logits(affine(&params.layers[2], hidden2.view()));
    Ok(ForwardTrace {
        input: batch.to_owned(),
        hidden1,
        hidden2,
        logits,
    })
}

/// Backpropagates `grad_logits` (already reduced over the batch by the
/// loss) through a recorded forward pass.
pub fn backward_trace(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_logits: &Array2<f64>,
) -> Result<ModelParams> {
    if grad_logits.dim() != trace.logits.0.dim() {
        return Err(FlekdError::invalid(format!(
            "gradient shape {:?} does not match logits {:?}",
            grad_logits.dim(),
            trace.logits.0.dim()
        )));
    }
    let [l1, l2, l3] = &params.layers;

    let g3 = grad_logits;
    let d3 = Dense {
        weight: g3.t().dot(&trace.hidden2),
        bias: g3.sum_axis(Axis(0)),
    };

    let mut g2 = g3.dot(&l3.weight);
    ndarray::Zip::from(&mut g2)
        .and(&trace.hidden2)
        .for_each(|g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
    let d2 = Dense {
        weight: g2.t().dot(&trace.hidden1),
        bias: g2.sum_axis(Axis(0)),
    };

    let mut g1 = g2.dot(&l2.weight);
    ndarray::Zip::from(&mut g1)
        .and(&trace.hidden1)
        .for_each(|g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
    let d1 = Dense {
        weight: g1.t().dot(&trace.input),
        bias: g1.sum_axis(Axis(0)),
    };
    debug_assert_eq!(d1.weight.dim(), l1.weight.dim());

    Ok(ModelParams {
        layers: [d1, d2, d3],
    })
}

/// Exact gradient of a loss with respect to every parameter, given the
/// loss gradient at the logits.
pub fn backward(
    params: &ModelParams,
    batch: ArrayView2<'_, f64>,
    grad_logits: &Array2<f64>,
) -> Result<ModelParams> {
    let trace = forward_trace(params, batch)?;
    backward_trace(params, &trace, grad_logits)
}
