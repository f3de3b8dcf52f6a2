//! Oracles shared by the integration suites.
#![allow(dead_code)]

use flekd_core::nn::{
    backward, cross_entropy_loss, forward, init_params, kl_distill_loss, Logits, ModelParams,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot weights plus non-zero biases, so every parameter matters.
pub fn random_params(input: usize, hidden: usize, classes: usize, seed: u64) -> ModelParams {
    let mut p = init_params(input, hidden, classes, seed).unwrap();
    let mut r = rng(seed ^ 0xb1a5);
    for layer in p.layers.iter_mut() {
        layer.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    p
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-scale..scale))
}

/// Central differences of `loss` at the flat parameter positions `coords`.
pub fn numeric_gradient_at(
    params: &ModelParams,
    coords: &[usize],
    h: f64,
    loss: impl Fn(&ModelParams) -> f64,
) -> Vec<f64> {
    let base: Vec<f64> = params.values().copied().collect();
    let mut probe = params.clone();
    let set = |p: &mut ModelParams, k: usize, v: f64| {
        for (i, slot) in p.values_mut().enumerate() {
            *slot = if i == k { v } else { base[i] };
        }
    };
    coords
        .iter()
        .map(|&k| {
            set(&mut probe, k, base[k] + h);
            let up = loss(&probe);
            set(&mut probe, k, base[k] - h);
            let down = loss(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn numeric_gradient(params: &ModelParams, h: f64, loss: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
    let all: Vec<usize> = (0..params.num_values()).collect();
    numeric_gradient_at(params, &all, h, loss)
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest per-coordinate `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn max_rel_err(analytic: &ModelParams, numeric: &[f64]) -> f64 {
    analytic
        .values()
        .zip(numeric)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}

pub fn ce_check(params: &ModelParams, x: &Array2<f64>, y: &[usize], h: f64) -> f64 {
    let logits = forward(params, x.view()).unwrap();
    let (_, g) = cross_entropy_loss(&logits, y).unwrap();
    let analytic = backward(params, x.view(), &g).unwrap();
    let numeric = numeric_gradient(params, h, |p| {
        cross_entropy_loss(&forward(p, x.view()).unwrap(), y).unwrap().0
    });
    max_rel_err(&analytic, &numeric)
}

pub fn kl_check(params: &ModelParams, x: &Array2<f64>, teacher: &Logits, t: f64, h: f64) -> f64 {
    let logits = forward(params, x.view()).unwrap();
    let (_, g) = kl_distill_loss(&logits, teacher, t).unwrap();
    let analytic = backward(params, x.view(), &g).unwrap();
    let numeric = numeric_gradient(params, h, |p| {
        kl_distill_loss(&forward(p, x.view()).unwrap(), teacher, t).unwrap().0
    });
    max_rel_err(&analytic, &numeric)
}

/// Total-variation distance between two class histograms.
pub fn total_variation(a: &[usize], b: &[usize]) -> f64 {
    let (na, nb) = (a.iter().sum::<usize>() as f64, b.iter().sum::<usize>() as f64);
    0.5 * a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / na - y as f64 / nb).abs())
        .sum::<f64>()
}
