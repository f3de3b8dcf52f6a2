use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, MinorityKeyword, MinoritySetting, Seeds};
use super::run::{LocalResult, SeedOutcome};
use crate::error::{FlekdError, Result};
use crate::federation::{Aggregator, ServerState};
use crate::metrics::{evaluate, first_round_reaching, ClassScores, ConfusionMatrix, RoundReport};

const AGGREGATORS: [Aggregator; 2] = [Aggregator::Fedavg, Aggregator::Flekd];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> FlekdError {
    FlekdError::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

/// One row per (aggregator, round). Wall time is left out so the file is a
/// pure function of the config.
pub fn rounds_csv(outcome: &SeedOutcome) -> Result<Vec<u8>> {
    let classes = outcome.class_names();
    let n_clients = outcome.data.clients.len();
    let mut header: Vec<String> = [
        "aggregator", "round", "macro_f1", "accuracy", "error_rate", "participants", "kl_before",
        "kl_after",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for name in classes {
        for metric in ["precision", "recall", "f1"] {
            header.push(format!("{metric}_{name}"));
        }
    }
    for id in 0..n_clients {
        header.push(format!("weight_{id}"));
    }
    for id in 0..n_clients {
        header.push(format!("teacher_acc_{id}"));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e| csv_error(Path::new("rounds.csv"), e);
    w.write_record(&header).map_err(io)?;
    for aggregator in AGGREGATORS {
        let Some(state) = outcome.server(aggregator) else {
            continue;
        };
        for r in &state.history {
            let mut row = vec![
                aggregator.name().to_string(),
                r.round.to_string(),
                num(r.macro_f1),
                num(r.accuracy),
                num(r.error_rate),
                r.participants
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                opt(r.kl_before),
                opt(r.kl_after),
            ];
            for s in &r.per_class {
                row.extend([num(s.precision), num(s.recall), num(s.f1)]);
            }
            for per_client in [&r.ensemble_weights, &r.teacher_accuracies] {
                let mut cells = vec![String::new(); n_clients];
                if let Some(values) = per_client {
                    for (&id, &v) in r.participants.iter().zip(values) {
                        cells[id] = num(v);
                    }
                }
                row.extend(cells);
            }
            w.write_record(&row).map_err(io)?;
        }
    }
    w.into_inner()
        .map_err(|e| FlekdError::invalid(format!("rounds.csv buffer: {e}")))
}

/// Per-class layout: one row per (model, class), with the model's macro
/// figures repeated on each row.
pub fn table_csv(outcome: &SeedOutcome) -> Result<Vec<u8>> {
    let classes = outcome.class_names();
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e| csv_error(Path::new("table.csv"), e);
    w.write_record([
        "model", "visible_dim", "class", "precision", "recall", "f1", "macro_f1", "accuracy",
    ])
    .map_err(io)?;
    let mut emit = |model: &str, dim: usize, per_class: &[ClassScores], macro_f1: f64, acc: f64| {
        for (name, s) in classes.iter().zip(per_class) {
            w.write_record([
                model.to_string(),
                dim.to_string(),
                name.clone(),
                num(s.precision),
                num(s.recall),
                num(s.f1),
                num(macro_f1),
                num(acc),
            ])?;
        }
        Ok::<(), csv::Error>(())
    };
    if let Some(locals) = &outcome.local_only {
        for l in locals {
            emit(
                &format!("client_{}", l.client),
                l.visible_dim,
                &l.scores.per_class,
                l.scores.macro_f1,
                l.matrix.accuracy(),
            )
            .map_err(io)?;
        }
    }
    let dim = outcome.data.test.dim();
    for aggregator in AGGREGATORS {
        if let Some(last) = outcome.server(aggregator).and_then(|s| s.history.last()) {
            emit(aggregator.name(), dim, &last.per_class, last.macro_f1, last.accuracy).map_err(io)?;
        }
    }
    w.into_inner()
        .map_err(|e| FlekdError::invalid(format!("table.csv buffer: {e}")))
}

#[derive(Debug, Serialize)]
pub struct LocalSummary {
    pub client: usize,
    pub group: usize,
    pub visible_dim: usize,
    pub n_samples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl From<&LocalResult> for LocalSummary {
    fn from(l: &LocalResult) -> Self {
        Self {
            client: l.client,
            group: l.group,
            visible_dim: l.visible_dim,
            n_samples: l.n_samples,
            accuracy: l.matrix.accuracy(),
            macro_f1: l.scores.macro_f1,
            per_class: l.scores.per_class.clone(),
            confusion: l.matrix.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FederatedSummary {
    #[serde(rename = "final")]
    pub last: RoundReport,
    pub rounds_to_target: Option<usize>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Serialize)]
pub struct FinalReport {
    pub scenario: String,
    pub seeds: Seeds,
    pub class_names: Vec<String>,
    pub target_macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_only: Option<Vec<LocalSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_only_mean_macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fedavg: Option<FederatedSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flekd: Option<FederatedSummary>,
}

fn federated_summary(state: &ServerState, outcome: &SeedOutcome, target: f64) -> Result<Option<FederatedSummary>> {
    let Some(last) = state.history.last() else {
        return Ok(None);
    };
    Ok(Some(FederatedSummary {
        last: last.clone(),
        rounds_to_target: first_round_reaching(&state.history, target),
        confusion: evaluate(&state.global_params, &outcome.data.test)?,
    }))
}

pub fn final_report(config: &ExperimentConfig, outcome: &SeedOutcome) -> Result<FinalReport> {
    let summary = |a: Aggregator| -> Result<Option<FederatedSummary>> {
        match outcome.server(a) {
            Some(s) => federated_summary(s, outcome, config.target_macro_f1),
            None => Ok(None),
        }
    };
    Ok(FinalReport {
        scenario: config.scenario.name().to_string(),
        seeds: outcome.seeds,
        class_names: outcome.class_names().to_vec(),
        target_macro_f1: config.target_macro_f1,
        local_only: outcome
            .local_only
            .as_ref()
            .map(|ls| ls.iter().map(LocalSummary::from).collect()),
        local_only_mean_macro_f1: outcome.mean_local_macro_f1(),
        fedavg: summary(Aggregator::Fedavg)?,
        flekd: summary(Aggregator::Flekd)?,
    })
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub aggregator: &'static str,
    pub round_seconds: Vec<f64>,
    pub total_seconds: f64,
}

pub fn timing(outcome: &SeedOutcome) -> Vec<Timing> {
    AGGREGATORS
        .iter()
        .filter_map(|&a| {
            let s = outcome.server(a)?;
            let round_seconds: Vec<f64> = s.history.iter().map(|r| r.wall_time.as_secs_f64()).collect();
            Some(Timing {
                aggregator: a.name(),
                total_seconds: round_seconds.iter().sum(),
                round_seconds,
            })
        })
        .collect()
}

/// Values the config left to be decided by the data.
#[derive(Debug, Serialize)]
pub struct Resolved {
    pub n_clients: usize,
    pub num_classes: usize,
    pub canonical_dim: usize,
    pub class_names: Vec<String>,
    pub minority_class: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub seeds: Vec<Seeds>,
}

pub fn manifest(config: &ExperimentConfig, outcome: &SeedOutcome) -> Manifest {
    let test = &outcome.data.test;
    let minority = config.minority_class.resolve(test.class_names());
    let n_clients = outcome.data.clients.len();
    let mut echoed = config.clone();
    echoed.n_clients = Some(n_clients);
    echoed.minority_class = match minority {
        Some(c) => MinoritySetting::Class(c),
        None => MinoritySetting::Keyword(MinorityKeyword::None),
    };
    Manifest {
        artifact: "flekd",
        version: env!("CARGO_PKG_VERSION"),
        resolved: Resolved {
            n_clients,
            num_classes: test.num_classes(),
            canonical_dim: test.dim(),
            class_names: test.class_names().to_vec(),
            minority_class: minority,
        },
        seeds: config.seed_sets(),
        config: echoed,
    }
}

#[derive(Debug, Serialize)]
pub struct SeedSummary {
    pub seeds: Seeds,
    pub local_only_mean_macro_f1: Option<f64>,
    pub fedavg_macro_f1: Option<f64>,
    pub flekd_macro_f1: Option<f64>,
    pub fedavg_rounds_to_target: Option<usize>,
    pub flekd_rounds_to_target: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub per_seed: Vec<SeedSummary>,
    pub mean_local_only_macro_f1: Option<f64>,
    pub mean_fedavg_macro_f1: Option<f64>,
    pub mean_flekd_macro_f1: Option<f64>,
}

pub fn summary(config: &ExperimentConfig, outcomes: &[SeedOutcome]) -> Summary {
    use super::run::mean_over;
    let reach = |o: &SeedOutcome, a| {
        o.server(a)
            .and_then(|s| first_round_reaching(&s.history, config.target_macro_f1))
    };
    Summary {
        per_seed: outcomes
            .iter()
            .map(|o| SeedSummary {
                seeds: o.seeds,
                local_only_mean_macro_f1: o.mean_local_macro_f1(),
                fedavg_macro_f1: o.final_macro_f1(Aggregator::Fedavg),
                flekd_macro_f1: o.final_macro_f1(Aggregator::Flekd),
                fedavg_rounds_to_target: reach(o, Aggregator::Fedavg),
                flekd_rounds_to_target: reach(o, Aggregator::Flekd),
            })
            .collect(),
        mean_local_only_macro_f1: mean_over(outcomes, |o| o.mean_local_macro_f1()),
        mean_fedavg_macro_f1: mean_over(outcomes, |o| o.final_macro_f1(Aggregator::Fedavg)),
        mean_flekd_macro_f1: mean_over(outcomes, |o| o.final_macro_f1(Aggregator::Flekd)),
    }
}

