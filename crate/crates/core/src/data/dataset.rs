use std::collections::HashSet;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FlekdError, Result};

/// Ordered feature names visible to a dataset, together with the full
/// canonical list they are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    columns: Vec<String>,
    canonical: Arc<Vec<String>>,
}

impl FeatureSchema {
    /// A schema that sees every canonical column.
    pub fn canonical(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(FlekdError::invalid("schema needs at least one column"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(FlekdError::invalid(format!("duplicate column name `{dup}`")));
        }
        Ok(Self {
            columns: names.clone(),
            canonical: Arc::new(names),
        })
    }

    /// `feat_00`, `feat_01`, ... for generated data.
    pub fn numbered(dim: usize) -> Result<Self> {
        Self::canonical((0..dim).map(|i| format!("feat_{i:02}")).collect())
    }

    /// A view of an explicit column list against a canonical schema.
    pub fn view(columns: Vec<String>, canonical: &FeatureSchema) -> Self {
        Self {
            columns,
            canonical: canonical.canonical.clone(),
        }
    }

    /// The first `d` canonical columns.
    pub fn prefix(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.canonical_dim() {
            return Err(FlekdError::invalid(format!(
                "prefix of {d} columns is outside 1..={}",
                self.canonical_dim()
            )));
        }
        Ok(Self {
            columns: self.canonical[..d].to_vec(),
            canonical: self.canonical.clone(),
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn canonical_columns(&self) -> &[String] {
        &self.canonical
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn canonical_dim(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_canonical(&self) -> bool {
        self.columns.as_slice() == self.canonical.as_slice()
    }

    pub fn is_canonical_prefix(&self) -> bool {
        self.columns.len() <= self.canonical.len()
            && self.columns.iter().zip(self.canonical.iter()).all(|(a, b)| a == b)
    }
}

/// Numeric feature matrix with optional integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    schema: FeatureSchema,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        schema: FeatureSchema,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.ncols() != schema.dim() {
            return Err(FlekdError::invalid(format!(
                "{} feature columns but schema has {}",
                features.ncols(),
                schema.dim()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(FlekdError::invalid("features contain non-finite values"));
        }
        if class_names.is_empty() {
            return Err(FlekdError::invalid("dataset needs at least one class"));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(FlekdError::invalid(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    features.nrows()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&y| y >= class_names.len()) {
                return Err(FlekdError::invalid(format!(
                    "label {bad} out of range for {} classes",
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            schema,
            class_names,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| FlekdError::invalid(format!("{what} requires a labeled dataset")))
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_rows()) {
            return Err(FlekdError::invalid(format!(
                "row {bad} out of range for {} rows",
                self.n_rows()
            )));
        }
        Ok(Dataset {
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            schema: self.schema.clone(),
            class_names: self.class_names.clone(),
        })
    }

    pub fn without_labels(mut self) -> Dataset {
        self.labels = None;
        self
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Dataset> {
        if names.len() < self.class_names.len() {
            if let Some(labels) = &self.labels {
                if labels.iter().any(|&y| y >= names.len()) {
                    return Err(FlekdError::invalid(format!(
                        "{} class names do not cover every label",
                        names.len()
                    )));
                }
            }
        }
        if names.is_empty() {
            return Err(FlekdError::invalid("class name list is empty"));
        }
        self.class_names = names;
        Ok(self)
    }

    /// Row count per class.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let labels = self.require_labels("class counts")?;
        let mut counts = vec![0; self.num_classes()];
        for &y in labels {
            counts[y] += 1;
        }
        Ok(counts)
    }

    /// Keeps only the first `d` canonical columns.
    pub fn truncate_to_prefix(&self, d: usize) -> Result<Dataset> {
        if !self.schema.is_canonical_prefix() || d > self.dim() {
            return Err(FlekdError::invalid(format!(
                "cannot take a {d}-column prefix of a {}-column dataset",
                self.dim()
            )));
        }
        Ok(Dataset {
            features: self.features.slice(s![.., ..d]).to_owned(),
            labels: self.labels.clone(),
            schema: self.schema.prefix(d)?,
            class_names: self.class_names.clone(),
        })
    }

    /// Appends zero columns for every canonical column the dataset lacks.
    pub fn pad_to_canonical(&self) -> Result<Dataset> {
        if !self.schema.is_canonical_prefix() {
            return Err(FlekdError::invalid(
                "dataset columns are not a prefix of the canonical schema",
            ));
        }
        if self.schema.is_canonical() {
            return Ok(self.clone());
        }
        let full = self.schema.canonical_dim();
        let mut features = Array2::zeros((self.n_rows(), full));
        features
            .slice_mut(s![.., ..self.dim()])
            .assign(&self.features);
        Ok(Dataset {
            features,
            labels: self.labels.clone(),
            schema: self.schema.prefix(full)?,
            class_names: self.class_names.clone(),
        })
    }

    /// Reorders and concatenates rows of several datasets with identical
    /// schema and classes.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| FlekdError::invalid("concat of zero datasets"))?;
        let views: Vec<_> = parts.iter().map(|d| d.features.view()).collect();
        for d in parts {
            if d.schema != first.schema || d.class_names != first.class_names {
                return Err(FlekdError::invalid("concat of datasets with different schemas"));
            }
        }
        let features = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| FlekdError::invalid(format!("concat: {e}")))?;
        let labels = if parts.iter().all(|d| d.labels.is_some()) {
            Some(parts.iter().flat_map(|d| d.labels.clone().unwrap()).collect())
        } else {
            None
        };
        Dataset::new(features, labels, first.schema.clone(), first.class_names.clone())
    }
}

/// Per-column z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero variance keep unit scale.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(FlekdError::invalid("cannot fit standardizer on zero rows"));
        }
        let x = dataset.features();
        let mean: Array1<f64> = x.mean_axis(Axis(0)).expect("non-empty");
        let std: Array1<f64> = x.std_axis(Axis(0), 0.0);
        Ok(Self {
            mean: mean.to_vec(),
            std: std.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect(),
        })
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let d = dataset.dim();
        if d > self.mean.len() {
            return Err(FlekdError::invalid(format!(
                "standardizer covers {} columns, dataset has {d}",
                self.mean.len()
            )));
        }
        let mut features = dataset.features().clone();
        for (j, mut col) in features.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(Dataset {
            features,
            ..dataset.clone()
        })
    }
}
