//! Ensemble knowledge distillation on the server.
//!
//! Client models act as teachers. Each is scored on the server validation
//! set, the scores are turned into ensemble weights with a temperature
//! softmax, the weighted sum of teacher logits on the unlabeled proxy set
//! becomes the target, and the fused global model is fine-tuned toward it
//! with the KL distillation loss.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FlekdError, Result};
use crate::metrics::evaluate;
use crate::nn::{
    adam_step, backward_trace, forward, forward_trace, kl_distill_loss, shuffled_batches,
    softmax_temp, AdamConfig, AdamState, Logits, ModelParams,
};
use crate::rng::{rng_for, TAG_DISTILL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub kd_temperature: f64,
    /// Temperature applied to teacher accuracies when forming weights.
    pub dt: f64,
    pub fine_tune_epochs: usize,
    pub lr0: f64,
    /// Fractional learning-rate reduction per fine-tune epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            kd_temperature: 1.5,
            dt: 0.5,
            fine_tune_epochs: 1,
            lr0: 1e-3,
            lr_decay: 0.05,
            batch_size: 64,
        }
    }
}

impl DistillConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr0: self.lr0,
            decay: self.lr_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub weights: Vec<f64>,
    pub dt: f64,
    pub accuracies: Vec<f64>,
}

/// Accuracy of every teacher on a labeled validation set.
pub fn score_teachers(teachers: &[&ModelParams], validation: &Dataset) -> Result<Vec<f64>> {
    validation.require_labels("teacher scoring")?;
    if validation.is_empty() {
        return Err(FlekdError::invalid("teacher scoring on an empty validation set"));
    }
    teachers
        .par_iter()
        .map(|p| evaluate(p, validation).map(|m| m.accuracy()))
        .collect()
}

/// `softmax(accuracies / dt)`.
pub fn ensemble_weights(accuracies: &[f64], dt: f64) -> Result<EnsembleWeights> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlekdError::invalid(format!("dt must be positive, got {dt}")));
    }
    if accuracies.is_empty() {
        return Err(FlekdError::invalid("ensemble weights need at least one teacher"));
    }
    if accuracies.iter().any(|a| !a.is_finite()) {
        return Err(FlekdError::invalid("teacher accuracies must be finite"));
    }
    Ok(EnsembleWeights {
        weights: softmax_temp(accuracies, dt)?,
        dt,
        accuracies: accuracies.to_vec(),
    })
}

/// `Σ_i w_i · logits_i`.
pub fn ensemble_logits(teacher_logits: &[Logits], weights: &[f64]) -> Result<Logits> {
    let first = teacher_logits
        .first()
        .ok_or_else(|| FlekdError::invalid("ensemble of zero teachers"))?;
    if teacher_logits.len() != weights.len() {
        return Err(FlekdError::invalid(format!(
            "{} teachers but {} weights",
            teacher_logits.len(),
            weights.len()
        )));
    }
    let shape = first.values().raw_dim();
    let mut out = Array2::zeros(shape.clone());
    for (t, &w) in teacher_logits.iter().zip(weights) {
        if t.values().raw_dim() != shape {
            return Err(FlekdError::invalid("teacher logits differ in shape"));
        }
        out.scaled_add(w, t.values());
    }
    Logits::new(out)
}

/// Logits of each teacher on the proxy set, at temperature 1.
pub fn teacher_logits(teachers: &[&ModelParams], proxy: &Dataset) -> Result<Vec<Logits>> {
    teachers
        .par_iter()
        .map(|p| forward(p, proxy.features().view()))
        .collect()
}

/// Mean KL between the ensemble target and the student on the whole proxy.
pub fn proxy_kl(student: &ModelParams, proxy: &Dataset, target: &Logits, temperature: f64) -> Result<f64> {
    let logits = forward(student, proxy.features().view())?;
    Ok(kl_distill_loss(&logits, target, temperature)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome {
    pub params: ModelParams,
    pub kl_before: f64,
    pub kl_after: f64,
}

/// Fine-tunes `global` toward the weighted teacher ensemble with
/// mini-batch Adam on the KL loss. Teacher logits stay fixed; Adam starts
/// fresh, and its learning rate decays once per epoch with the count
/// continuing from `epochs_done` (fine-tune epochs run in earlier rounds).
pub fn fine_tune(
    global: &ModelParams,
    proxy: &Dataset,
    teacher_logits: &[Logits],
    weights: &EnsembleWeights,
    config: &DistillConfig,
    epochs_done: u32,
    seed: u64,
) -> Result<FineTuneOutcome> {
    if proxy.is_empty() {
        return Err(FlekdError::invalid("fine-tuning on an empty proxy set"));
    }
    let target = ensemble_logits(teacher_logits, &weights.weights)?;
    if target.n_samples() != proxy.n_rows() {
        return Err(FlekdError::invalid(format!(
            "teacher logits cover {} rows, proxy has {}",
            target.n_samples(),
            proxy.n_rows()
        )));
    }
    let t = config.kd_temperature;
    let kl_before = proxy_kl(global, proxy, &target, t)?;
    let mut params = global.clone();
    if config.fine_tune_epochs == 0 {
        return Ok(FineTuneOutcome {
            params,
            kl_before,
            kl_after: kl_before,
        });
    }

    let mut state = AdamState::new(&params, config.adam());
    let x = proxy.features();
    let z = target.values();
    for epoch in 0..config.fine_tune_epochs {
        state.set_ticks(epochs_done + epoch as u32);
        let mut rng = rng_for(seed, &[TAG_DISTILL, epoch as u64]);
        for idx in shuffled_batches(proxy.n_rows(), config.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &idx);
            let zb = Logits(z.select(Axis(0), &idx));
            let trace = forward_trace(&params, xb.view())?;
            let (_, grad) = kl_distill_loss(&trace.logits, &zb, t)?;
            let grads = backward_trace(&params, &trace, &grad)?;
            adam_step(&mut params, &grads, &mut state)?;
        }
    }
    let kl_after = proxy_kl(&params, proxy, &target, t)?;
    Ok(FineTuneOutcome {
        params,
        kl_before,
        kl_after,
    })
}

/// Full server-side distillation stage for one round. Its only inputs are
/// the client models already received for fusion and server-held data.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub params: ModelParams,
    pub weights: EnsembleWeights,
    pub kl_before: f64,
    pub kl_after: f64,
}

pub fn distill_round(
    fused: &ModelParams,
    teachers: &[&ModelParams],
    proxy: &Dataset,
    validation: &Dataset,
    config: &DistillConfig,
    epochs_done: u32,
    seed: u64,
) -> Result<DistillOutcome> {
    let accuracies = score_teachers(teachers, validation)?;
    let weights = ensemble_weights(&accuracies, config.dt)?;
    let logits = teacher_logits(teachers, proxy)?;
    let out = fine_tune(fused, proxy, &logits, &weights, config, epochs_done, seed)?;
    Ok(DistillOutcome {
        params: out.params,
        weights,
        kl_before: out.kl_before,
        kl_after: out.kl_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, FeatureSchema};
    use crate::nn::{init_params, Dense};
    use ndarray::{array, Array1};

    #[test]
    fn weights_reference_values() {
        let w = ensemble_weights(&[1.0, 0.0], 0.5).unwrap().weights;
        assert!((w[0] - 0.8808).abs() < 1e-4 && (w[1] - 0.1192).abs() < 1e-4);
        let w = ensemble_weights(&[0.9; 3], 0.5).unwrap().weights;
        assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(ensemble_weights(&[0.5], 0.0).is_err());
        assert!(ensemble_weights(&[0.5], -1.0).is_err());
    }

    #[test]
    fn logits_are_mixed_linearly() {
        let a = Logits(array![[0.0, 4.0]]);
        let b = Logits(array![[4.0, 0.0]]);
        let mixed = ensemble_logits(&[a.clone(), b], &[0.25, 0.75]).unwrap();
        assert_eq!(mixed.0, array![[3.0, 1.0]]);
        assert_eq!(ensemble_logits(&[a.clone()], &[1.0]).unwrap(), a);
        assert_eq!(ensemble_logits(&[a.clone(), a.clone()], &[0.3, 0.7]).unwrap().0, a.0);
        assert!(ensemble_logits(&[a.clone()], &[0.5, 0.5]).is_err());
        assert!(ensemble_logits(&[a, Logits(array![[1.0, 2.0, 3.0]])], &[0.5, 0.5]).is_err());
    }

    fn linear_two_class() -> ModelParams {
        // Predicts class 0 when x0 > x1.
        let eye = || Dense {
            weight: array![[1.0, 0.0], [0.0, 1.0]],
            bias: Array1::zeros(2),
        };
        ModelParams::from_layers([eye(), eye(), eye()]).unwrap()
    }

    #[test]
    fn scores_are_hand_countable() {
        let x = array![
            [1.0, 0.0],
            [0.0, 1.0],
            [2.0, 1.0],
            [1.0, 3.0],
            [0.5, 0.2],
            [0.1, 0.9],
            [3.0, 0.0],
            [0.0, 2.0],
            [1.0, 0.5],
            [0.2, 0.8]
        ];
        // Predictions: 0 1 0 1 0 1 0 1 0 1; last three labels disagree.
        let y = vec![0, 1, 0, 1, 0, 1, 0, 0, 1, 0];
        let d = Dataset::new(x, Some(y), FeatureSchema::numbered(2).unwrap(), vec!["a".into(), "b".into()]).unwrap();
        let acc = score_teachers(&[&linear_two_class()], &d).unwrap();
        assert!((acc[0] - 0.7).abs() < 1e-15);

        let empty = d.subset(&[]).unwrap();
        assert!(score_teachers(&[&linear_two_class()], &empty).is_err());
    }

    #[test]
    fn perfect_and_constant_teachers() {
        let data = synth_generate(50, 7, 10, 1).unwrap();
        let mut constant = init_params(10, 4, 7, 0).unwrap();
        constant.layers[2].weight.fill(0.0);
        constant.layers[2].bias[3] = 1.0;
        let acc = score_teachers(&[&constant], &data).unwrap();
        assert!((acc[0] - 1.0 / 7.0).abs() < 1e-12);
    }

    fn proxy_set() -> Dataset {
        synth_generate(30, 3, 6, 4).unwrap().without_labels()
    }

    #[test]
    fn zero_epochs_is_identity_and_matching_student_stays_put() {
        let proxy = proxy_set();
        let student = init_params(6, 8, 3, 2).unwrap();
        let logits = teacher_logits(&[&student], &proxy).unwrap();
        let w = ensemble_weights(&[0.5], 0.5).unwrap();
        let cfg = DistillConfig {
            fine_tune_epochs: 0,
            ..DistillConfig::default()
        };
        let out = fine_tune(&student, &proxy, &logits, &w, &cfg, 0, 1).unwrap();
        assert_eq!(out.params, student);

        let out = fine_tune(&student, &proxy, &logits, &w, &DistillConfig::default(), 0, 1).unwrap();
        assert!(out.kl_before < 1e-15);
        assert!(out.params.max_abs_diff(&student) < 1e-6);
    }

    #[test]
    fn fine_tune_reduces_kl() {
        let proxy = proxy_set();
        let student = init_params(6, 8, 3, 2).unwrap();
        let a = init_params(6, 8, 3, 5).unwrap();
        let b = init_params(6, 8, 3, 6).unwrap();
        let logits = teacher_logits(&[&a, &b], &proxy).unwrap();
        let w = ensemble_weights(&[0.8, 0.6], 0.5).unwrap();
        let cfg = DistillConfig {
            fine_tune_epochs: 5,
            batch_size: 16,
            ..DistillConfig::default()
        };
        let out = fine_tune(&student, &proxy, &logits, &w, &cfg, 0, 3).unwrap();
        assert!(out.kl_after < out.kl_before, "{} -> {}", out.kl_before, out.kl_after);

        let empty = proxy.subset(&[]).unwrap();
        assert!(fine_tune(&student, &empty, &logits, &w, &cfg, 0, 3).is_err());
    }
}
