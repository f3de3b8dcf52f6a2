//! Multi-class evaluation: confusion matrices, per-class precision, recall
//! and F1, macro aggregates, and per-round reports.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FlekdError, Result};
use crate::nn::{forward, ModelParams};

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(FlekdError::invalid(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::zeros(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(FlekdError::invalid(format!(
                    "class index ({t}, {p}) out of range for {num_classes} classes"
                )));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    /// Exactly `1 − accuracy`.
    pub fn error_rate(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            (total - self.correct()) as f64 / total as f64
        }
    }
}

/// Argmax predictions of `params` against the labels of `test_set`; ties go
/// to the lowest class index.
pub fn evaluate(params: &ModelParams, test_set: &Dataset) -> Result<ConfusionMatrix> {
    let labels = test_set.require_labels("evaluation")?;
    if test_set.is_empty() {
        return Err(FlekdError::invalid("evaluation on an empty test set"));
    }
    let logits = forward(params, test_set.features().view())?;
    if logits.num_classes() != test_set.num_classes() {
        return Err(FlekdError::invalid(format!(
            "model emits {} classes, test set has {}",
            logits.num_classes(),
            test_set.num_classes()
        )));
    }
    ConfusionMatrix::from_predictions(labels, &logits.argmax(), test_set.num_classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 with 0/0 taken as 0; macro F1 is the
/// unweighted mean over classes.
pub fn prf1(matrix: &ConfusionMatrix) -> Prf1 {
    let c = matrix.num_classes();
    let per_class: Vec<ClassScores> = (0..c)
        .map(|k| {
            let tp = matrix.counts[k][k];
            let predicted: u64 = (0..c).map(|t| matrix.counts[t][k]).sum();
            let actual: u64 = matrix.counts[k].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if tp == 0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_f1 = if c == 0 {
        0.0
    } else {
        per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64
    };
    Prf1 {
        per_class,
        macro_f1,
    }
}

/// Server-side metrics after one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based round number.
    pub round: usize,
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub error_rate: f64,
    pub participants: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_accuracies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_after: Option<f64>,
    /// Excluded from equality-sensitive outputs such as `rounds.csv`.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RoundReport {
    pub fn from_matrix(round: usize, matrix: &ConfusionMatrix) -> Self {
        let scores = prf1(matrix);
        Self {
            round,
            per_class: scores.per_class,
            macro_f1: scores.macro_f1,
            accuracy: matrix.accuracy(),
            error_rate: matrix.error_rate(),
            participants: Vec::new(),
            ensemble_weights: None,
            teacher_accuracies: None,
            kl_before: None,
            kl_after: None,
            wall_time: Duration::ZERO,
        }
    }

    /// Same metrics, ignoring wall-clock time.
    pub fn same_metrics(&self, other: &RoundReport) -> bool {
        let strip = |r: &RoundReport| RoundReport {
            wall_time: Duration::ZERO,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

/// First 1-based round whose macro F1 reaches `threshold`.
pub fn first_round_reaching(history: &[RoundReport], threshold: f64) -> Option<usize> {
    history.iter().find(|r| r.macro_f1 >= threshold).map(|r| r.round)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;
    use crate::nn::{Dense, ModelParams};
    use ndarray::{array, Array1, Array2};

    #[test]
    fn diagonal_matrix_scores_one() {
        let m = ConfusionMatrix::from_predictions(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let s = prf1(&m);
        assert!(s.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!(s.macro_f1, 1.0);
        assert_eq!(m.error_rate(), 0.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = ConfusionMatrix::from_predictions(&[0, 1], &[0, 1], 3).unwrap();
        let s = prf1(&m);
        assert_eq!(s.per_class[2], ClassScores { precision: 0.0, recall: 0.0, f1: 0.0 });
        assert!((s.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_class_hand_example() {
        let m = ConfusionMatrix {
            counts: vec![vec![5, 1], vec![2, 2]],
        };
        let s = prf1(&m);
        let (p, r) = (5.0 / 7.0, 5.0 / 6.0);
        assert!((s.per_class[0].precision - p).abs() < 1e-15);
        assert!((s.per_class[0].recall - r).abs() < 1e-15);
        assert!((s.per_class[0].f1 - 0.769_230_769).abs() < 1e-6);
        // class 1: tp 2, predicted 3, actual 4
        assert!((s.per_class[1].f1 - 2.0 * (2.0 / 3.0) * 0.5 / (2.0 / 3.0 + 0.5)).abs() < 1e-15);
        assert!((m.accuracy() + m.error_rate() - 1.0).abs() == 0.0);
    }

    fn bias_only(bias: Vec<f64>, input_dim: usize) -> ModelParams {
        let c = bias.len();
        ModelParams::from_layers([
            Dense::zeros(2, input_dim),
            Dense::zeros(2, 2),
            Dense {
                weight: Array2::zeros((c, 2)),
                bias: Array1::from(bias),
            },
        ])
        .unwrap()
    }

    #[test]
    fn constant_predictor_fills_one_column() {
        let x = Array2::zeros((6, 2));
        let d = Dataset::new(
            x,
            Some(vec![0, 1, 2, 0, 1, 2]),
            FeatureSchema::numbered(2).unwrap(),
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let m = evaluate(&bias_only(vec![1.0, 0.0, 1.0], 2), &d).unwrap();
        // tie between 0 and 2 resolves to 0
        assert_eq!(m.counts, vec![vec![2, 0, 0], vec![2, 0, 0], vec![2, 0, 0]]);
    }

    #[test]
    fn handcrafted_six_rows() {
        // Identity-ish net: hidden = relu(x), logits = hidden; 2 classes.
        let eye = || Dense {
            weight: array![[1.0, 0.0], [0.0, 1.0]],
            bias: Array1::zeros(2),
        };
        let p = ModelParams::from_layers([eye(), eye(), eye()]).unwrap();
        let x = array![[2.0, 1.0], [0.0, 3.0], [1.0, 1.0], [-1.0, 0.5], [4.0, 0.0], [0.2, 0.1]];
        // predictions: 0, 1, 0 (tie), 1, 0, 0
        let y = vec![0, 1, 1, 1, 0, 1];
        let d = Dataset::new(x, Some(y), FeatureSchema::numbered(2).unwrap(), vec!["a".into(), "b".into()]).unwrap();
        let m = evaluate(&p, &d).unwrap();
        assert_eq!(m.counts, vec![vec![2, 0], vec![2, 2]]);
    }

    #[test]
    fn empty_or_unlabeled_test_set_is_rejected() {
        let d = Dataset::new(
            Array2::zeros((0, 2)),
            Some(vec![]),
            FeatureSchema::numbered(2).unwrap(),
            vec!["a".into()],
        )
        .unwrap();
        assert!(evaluate(&bias_only(vec![0.0], 2), &d).is_err());
    }
}
