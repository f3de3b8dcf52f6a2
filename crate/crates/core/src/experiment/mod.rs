//! Config-driven experiments: parse a JSON description, build the scenario,
//! run local-only training, FedAvg and FLEKD, and write reports.
//!
//! A run directory holds:
//!
//! | file | contents |
//! |---|---|
//! | `manifest.json` | resolved config, seeds, artifact version |
//! | `rounds.csv` | per-round server metrics for each aggregator |
//! | `table.csv` | per-class scores for every client and aggregator |
//! | `final.json` | final metrics and confusion matrices |
//! | `partition.json` | row indices of every client and server set |
//! | `preprocess.json` | standardization statistics and class names |
//! | `fedavg.fkds`, `flekd.fkds` | final global models |
//! | `timing.json` | wall-clock seconds per round |
//!
//! Everything except `timing.json` is a pure function of the config. With a
//! `seed_list`, each seed gets a `seed_<n>` subdirectory and the top level
//! gets `manifest.json` and `summary.json`.

mod config;
mod report;
mod run;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    parse_config, parse_config_str, to_json, CsvSource, DataSource, ExperimentConfig, Method,
    MinorityKeyword, MinoritySetting, Seeds, SyntheticSource, ALPHA_PRESETS, DEFAULT_ALPHA,
    DEFAULT_CLIENTS, DEFAULT_HOLDOUT, DEFAULT_TARGET_F1,
};
pub use report::{
    final_report, manifest, rounds_csv, summary, table_csv, timing, FederatedSummary, FinalReport,
    LocalSummary, Manifest, Summary,
};
pub use run::{
    build_data, evaluate_local, load_base, mean_over, run_all, run_seed, split_params,
    LocalResult, SeedOutcome,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{load_csv, schema_from_header, Dataset, FeatureSchema, Standardizer};
use crate::error::{FlekdError, Result};
use crate::federation::Aggregator;
use crate::metrics::{evaluate, prf1, ClassScores, ConfusionMatrix};

pub const PREPROCESS_FILE: &str = "preprocess.json";

/// What `eval` needs to feed raw rows to a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub columns: Vec<String>,
    pub class_names: Vec<String>,
    pub standardizer: Standardizer,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| FlekdError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FlekdError::io(dir, e))
}

/// Writes every per-seed artifact into `dir`.
pub fn write_seed_reports(config: &ExperimentConfig, outcome: &SeedOutcome, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join("rounds.csv"), rounds_csv(outcome)?)?;
    write(&dir.join("table.csv"), table_csv(outcome)?)?;
    write_json(&dir.join("final.json"), &final_report(config, outcome)?)?;
    write_json(&dir.join("partition.json"), &outcome.data.layout)?;
    write_json(&dir.join("timing.json"), &timing(outcome))?;
    let test = &outcome.data.test;
    write_json(
        &dir.join(PREPROCESS_FILE),
        &Preprocess {
            columns: test.schema().canonical_columns().to_vec(),
            class_names: test.class_names().to_vec(),
            standardizer: outcome.data.standardizer.clone(),
        },
    )?;
    for aggregator in [Aggregator::Fedavg, Aggregator::Flekd] {
        if let Some(state) = outcome.server(aggregator) {
            save_checkpoint(&state.global_params, &dir.join(format!("{}.fkds", aggregator.name())))?;
        }
    }
    Ok(())
}

/// Directory the artifacts of `seeds` go to.
pub fn seed_dir(config: &ExperimentConfig, seeds: &Seeds) -> PathBuf {
    if config.seed_list.is_empty() {
        config.output_dir.clone()
    } else {
        config.output_dir.join(format!("seed_{}", seeds.data))
    }
}

/// Runs the experiment and writes all reports under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SeedOutcome>> {
    let outcomes = run_all(config)?;
    create_dir(&config.output_dir)?;
    for outcome in &outcomes {
        write_seed_reports(config, outcome, &seed_dir(config, &outcome.seeds))?;
    }
    if let Some(first) = outcomes.first() {
        write_json(&config.output_dir.join("manifest.json"), &manifest(config, first))?;
    }
    if !config.seed_list.is_empty() {
        write_json(&config.output_dir.join("summary.json"), &summary(config, &outcomes))?;
    }
    Ok(outcomes)
}

/// Scores of a checkpoint on a labeled CSV.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rows: usize,
    pub dropped: usize,
    pub standardized: bool,
    pub class_names: Vec<String>,
    pub accuracy: f64,
    pub error_rate: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

/// Reads `preprocess.json` beside the checkpoint when present. The CSV may
/// hold a leading prefix of the model's columns; the rest are zero-filled
/// after standardization.
pub fn evaluate_checkpoint(checkpoint: &Path, test_csv: &Path) -> Result<EvalReport> {
    let params = load_checkpoint(checkpoint)?;
    let dims = params.dims();
    let preprocess_path = checkpoint
        .parent()
        .map(|d| d.join(PREPROCESS_FILE))
        .filter(|p| p.is_file());
    let preprocess: Option<Preprocess> = match &preprocess_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| FlekdError::io(p, e))?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };

    let header = schema_from_header(test_csv)?;
    let d = header.dim();
    if d > dims.input_dim {
        return Err(FlekdError::HeaderMismatch {
            path: test_csv.to_path_buf(),
            detail: format!("{d} feature columns, model takes {}", dims.input_dim),
        });
    }
    let (canonical, class_names) = match &preprocess {
        Some(p) => {
            if p.columns.get(..d) != Some(header.columns()) {
                return Err(FlekdError::HeaderMismatch {
                    path: test_csv.to_path_buf(),
                    detail: format!("columns are not a prefix of the training schema ({} columns)", p.columns.len()),
                });
            }
            (FeatureSchema::canonical(p.columns.clone())?, p.class_names.clone())
        }
        None => (
            FeatureSchema::numbered(dims.input_dim)?,
            (0..dims.num_classes).map(|c| format!("class_{c}")).collect(),
        ),
    };
    if canonical.dim() != dims.input_dim || class_names.len() != dims.num_classes {
        return Err(FlekdError::invalid(format!(
            "{PREPROCESS_FILE} does not match the checkpoint dimensions"
        )));
    }

    let loaded = load_csv(test_csv, &header, true)?;
    let labels = loaded.dataset.labels().expect("labeled load").to_vec();
    let mut dataset = Dataset::new(
        loaded.dataset.features().clone(),
        Some(labels),
        FeatureSchema::view(canonical.columns()[..d].to_vec(), &canonical),
        class_names,
    )?;
    if let Some(p) = &preprocess {
        dataset = p.standardizer.apply(&dataset)?;
    }
    let dataset = dataset.pad_to_canonical()?;
    debug_assert_eq!(dataset.features().dim(), (dataset.n_rows(), dims.input_dim));
    let matrix = evaluate(&params, &dataset)?;
    let scores = prf1(&matrix);
    Ok(EvalReport {
        rows: dataset.n_rows(),
        dropped: loaded.dropped,
        standardized: preprocess.is_some(),
        class_names: dataset.class_names().to_vec(),
        accuracy: matrix.accuracy(),
        error_rate: matrix.error_rate(),
        macro_f1: scores.macro_f1,
        per_class: scores.per_class,
        confusion: matrix,
    })
}
