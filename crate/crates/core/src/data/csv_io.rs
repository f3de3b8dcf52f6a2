use std::path::Path;

use ndarray::Array2;

use super::dataset::{Dataset, FeatureSchema};
use crate::error::{FlekdError, Result};

pub const LABEL_COLUMN: &str = "label";

/// Outcome of reading a flow-feature CSV.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    /// Rows skipped because a cell was non-numeric or non-finite.
    pub dropped: usize,
}

/// Reads the header of a CSV and builds a canonical schema from its
/// feature columns (everything except a trailing `label`).
pub fn schema_from_header(path: &Path) -> Result<FeatureSchema> {
    let mut reader = ::csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    let mut names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if names.last().map(String::as_str) == Some(LABEL_COLUMN) {
        names.pop();
    }
    FeatureSchema::canonical(names)
}

fn csv_err(path: &Path, e: ::csv::Error) -> FlekdError {
    match e.kind() {
        ::csv::ErrorKind::Io(_) => {
            let io = match e.into_kind() {
                ::csv::ErrorKind::Io(io) => io,
                _ => unreachable!(),
            };
            FlekdError::io(path, io)
        }
        _ => FlekdError::Csv {
            path: path.to_path_buf(),
            source: e,
        },
    }
}

/// Loads a UTF-8, comma-separated file whose header lists `schema`'s
/// columns in order, followed by `label` when `labeled`. Labels are
/// integer class indices. Features are returned unscaled; standardization
/// happens once the training split is known.
pub fn load_csv(path: &Path, schema: &FeatureSchema, labeled: bool) -> Result<LoadedCsv> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let mut expected: Vec<&str> = schema.columns().iter().map(String::as_str).collect();
    if labeled {
        expected.push(LABEL_COLUMN);
    }
    if header != expected {
        let missing: Vec<&str> = expected
            .iter()
            .filter(|c| !header.iter().any(|h| h == *c))
            .copied()
            .collect();
        let detail = if missing.is_empty() {
            format!("expected columns {expected:?} in order, found {header:?}")
        } else {
            format!("missing columns {missing:?}")
        };
        return Err(FlekdError::HeaderMismatch {
            path: path.to_path_buf(),
            detail,
        });
    }

    let d = schema.dim();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    let mut max_label = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != expected.len() {
            dropped += 1;
            continue;
        }
        let row: Option<Vec<f64>> = record
            .iter()
            .take(d)
            .map(|cell| cell.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let label = if labeled {
            match record[d].trim().parse::<usize>() {
                Ok(y) => Some(y),
                Err(_) => {
                    dropped += 1;
                    continue;
                }
            }
        } else {
            None
        };
        match row {
            Some(row) => {
                values.extend(row);
                if let Some(y) = label {
                    max_label = max_label.max(y);
                    labels.push(y);
                }
            }
            None => dropped += 1,
        }
    }

    let n = values.len() / d;
    if n == 0 {
        return Err(FlekdError::NoUsableRows {
            path: path.to_path_buf(),
            dropped,
        });
    }
    let features = Array2::from_shape_vec((n, d), values).expect("row width checked");
    let class_names = (0..=max_label).map(|c| format!("class_{c}")).collect();
    let dataset = Dataset::new(
        features,
        labeled.then_some(labels),
        schema.clone(),
        class_names,
    )?;
    Ok(LoadedCsv { dataset, dropped })
}

/// Writes a dataset in the same layout `load_csv` reads.
pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut writer = ::csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<&str> = dataset.schema().columns().iter().map(String::as_str).collect();
    if dataset.labels().is_some() {
        header.push(LABEL_COLUMN);
    }
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, row) in dataset.features().rows().into_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        if let Some(labels) = dataset.labels() {
            cells.push(labels[i].to_string());
        }
        writer.write_record(&cells).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| FlekdError::io(path, e))?;
    Ok(())
}
