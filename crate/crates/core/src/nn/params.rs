use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlekdError, Result};
use crate::rng::rng_for;

/// Shape of the three-layer classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        for (name, v) in [
            ("input_dim", input_dim),
            ("hidden_dim", hidden_dim),
            ("num_classes", num_classes),
        ] {
            if v == 0 {
                return Err(FlekdError::invalid(format!("{name} must be positive")));
            }
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            num_classes,
        })
    }

    /// `(out, in)` for each of the three layers.
    pub fn layer_shapes(&self) -> [(usize, usize); 3] {
        [
            (self.hidden_dim, self.input_dim),
            (self.hidden_dim, self.hidden_dim),
            (self.num_classes, self.hidden_dim),
        ]
    }
}

/// One fully connected layer, `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of the 3-layer ReLU MLP. This is the unit exchanged between
/// clients and the server; gradients and Adam moments reuse the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: [Dense; 3],
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let [a, b, c] = dims.layer_shapes();
        Self {
            layers: [
                Dense::zeros(a.0, a.1),
                Dense::zeros(b.0, b.1),
                Dense::zeros(c.0, c.1),
            ],
        }
    }

    /// Builds parameters from explicit layers, checking that they chain.
    pub fn from_layers(layers: [Dense; 3]) -> Result<Self> {
        let params = Self { layers };
        params.validate()?;
        Ok(params)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.layers[0].in_dim(),
            hidden_dim: self.layers[0].out_dim(),
            num_classes: self.layers[2].out_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(FlekdError::invalid(format!(
                    "layer {i}: bias length {} does not match {} outputs",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(FlekdError::invalid(format!("layer {i} has an empty dimension")));
            }
        }
        for i in 1..3 {
            if self.layers[i].in_dim() != self.layers[i - 1].out_dim() {
                return Err(FlekdError::invalid(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    self.layers[i].in_dim(),
                    i - 1,
                    self.layers[i - 1].out_dim()
                )));
            }
        }
        if self.values().any(|v| !v.is_finite()) {
            return Err(FlekdError::invalid("parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers
            .iter()
            .zip(other.layers.iter())
            .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    pub fn ensure_same_shape(&self, other: &ModelParams, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(FlekdError::invalid(format!(
                "{what}: parameter shapes differ ({:?} vs {:?})",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn num_values(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// All values in canonical order: per layer, weight row-major then bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// `self += scale * other`.
    pub fn scaled_add(&mut self, scale: f64, other: &ModelParams) {
        for (dst, src) in self.layers.iter_mut().zip(other.layers.iter()) {
            dst.weight.scaled_add(scale, &src.weight);
            dst.bias.scaled_add(scale, &src.bias);
        }
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
pub fn init_params(
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    let dims = ModelDims::new(input_dim, hidden_dim, num_classes)?;
    let mut rng = rng_for(seed, &[]);
    let mut params = ModelParams::zeros(dims);
    for layer in params.layers.iter_mut() {
        let limit = (6.0 / (layer.in_dim() + layer.out_dim()) as f64).sqrt();
        for w in layer.weight.iter_mut() {
            *w = rng.random_range(-limit..limit);
        }
    }
    Ok(params)
}
