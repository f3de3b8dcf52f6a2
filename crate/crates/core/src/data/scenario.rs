use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Standardizer};
use super::partition::dirichlet_split;
use super::proxy::sample_proxy_from;
use crate::error::{FlekdError, Result};
use crate::rng::{derive_seed, rng_for, TAG_HOLDOUT, TAG_SCENARIO};

pub fn default_group_dims() -> Vec<usize> {
    vec![82, 79, 24]
}

pub fn default_multipliers() -> Vec<usize> {
    vec![1, 10, 100]
}

/// Which heterogeneity setting the clients are built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// Dirichlet label skew only.
    Baseline,
    /// Label skew plus client groups that see shrinking column prefixes.
    Dims {
        #[serde(default = "default_group_dims")]
        group_dims: Vec<usize>,
    },
    /// Client groups whose sample counts are `base × multiplier`.
    SampleSize {
        base: usize,
        #[serde(default = "default_multipliers")]
        multipliers: Vec<usize>,
    },
    /// One client per entry; client `k` has every row of class `dropped[k]`
    /// removed. Defaults to client `k` dropping class `k`.
    DropLabel {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dropped: Option<Vec<usize>>,
    },
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::Baseline
    }
}

impl ScenarioSpec {
    pub fn validate(&self, num_classes: usize, canonical_dim: usize) -> Result<()> {
        match self {
            ScenarioSpec::Baseline => Ok(()),
            ScenarioSpec::Dims { group_dims } => {
                if group_dims.is_empty() {
                    return Err(FlekdError::invalid("dims scenario needs at least one group"));
                }
                if let Some(&d) = group_dims.iter().find(|&&d| d == 0 || d > canonical_dim) {
                    return Err(FlekdError::invalid(format!(
                        "group dimension {d} outside 1..={canonical_dim}"
                    )));
                }
                Ok(())
            }
            ScenarioSpec::SampleSize { base, multipliers } => {
                if *base == 0 || multipliers.is_empty() || multipliers.contains(&0) {
                    return Err(FlekdError::invalid(
                        "sample_size scenario needs a positive base and positive multipliers",
                    ));
                }
                Ok(())
            }
            ScenarioSpec::DropLabel { .. } => {
                let dropped = self.dropped_labels(num_classes);
                if let Some(&bad) = dropped.iter().find(|&&c| c >= num_classes) {
                    return Err(FlekdError::invalid(format!(
                        "dropped label {bad} out of range for {num_classes} classes"
                    )));
                }
                if dropped.is_empty() {
                    return Err(FlekdError::invalid("drop_label scenario needs at least one client"));
                }
                Ok(())
            }
        }
    }

    /// Client count the scenario imposes, if any.
    pub fn required_clients(&self, num_classes: usize) -> Option<usize> {
        match self {
            ScenarioSpec::DropLabel { .. } => Some(self.dropped_labels(num_classes).len()),
            _ => None,
        }
    }

    pub fn dropped_labels(&self, num_classes: usize) -> Vec<usize> {
        match self {
            ScenarioSpec::DropLabel { dropped: Some(d) } => d.clone(),
            ScenarioSpec::DropLabel { dropped: None } => (0..num_classes).collect(),
            _ => Vec::new(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioSpec::Baseline => "baseline",
            ScenarioSpec::Dims { .. } => "dims",
            ScenarioSpec::SampleSize { .. } => "sample_size",
            ScenarioSpec::DropLabel { .. } => "drop_label",
        }
    }
}

/// Knobs shared by every scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitParams {
    pub n_clients: usize,
    pub alpha: f64,
    pub proxy_size: usize,
    pub minority_class: Option<usize>,
    /// Fraction of the non-proxy rows held out for server validation and
    /// test, split evenly between the two.
    pub holdout_fraction: f64,
    pub seed: u64,
}

/// One client's private data, zero-padded to the canonical width.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub id: usize,
    pub group: usize,
    /// Number of leading canonical columns the client actually observes.
    pub visible_dim: usize,
    pub dataset: Dataset,
}

/// Row indices into the base dataset for every role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataLayout {
    pub scenario: String,
    pub alpha: f64,
    pub seed: u64,
    pub clients: Vec<Vec<usize>>,
    pub proxy: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Training-pool rows no client received (dropped labels, surplus).
    pub unused: usize,
}

/// Everything the federation needs: private client data plus the
/// server-held proxy, validation and test sets.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub clients: Vec<ClientData>,
    pub proxy: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub standardizer: Standardizer,
    pub layout: DataLayout,
}

fn holdout_split(
    labels: &[usize],
    num_classes: usize,
    pool: &[usize],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &row in pool {
        by_class[labels[row]].push(row);
    }
    let mut rng = rng_for(seed, &[TAG_HOLDOUT]);
    let (mut validation, mut test, mut train) = (Vec::new(), Vec::new(), Vec::new());
    for rows in by_class.iter_mut() {
        rows.shuffle(&mut rng);
        let held = (rows.len() as f64 * fraction).round() as usize;
        let half = held / 2;
        validation.extend_from_slice(&rows[..half]);
        test.extend_from_slice(&rows[half..held]);
        train.extend_from_slice(&rows[held..]);
    }
    validation.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    (validation, test, train)
}

fn group_of(client: usize, n_clients: usize, n_groups: usize) -> usize {
    client * n_groups / n_clients
}

/// Builds client and server datasets for a scenario. Standardization
/// statistics are fitted on the pooled client training rows and applied to
/// every role.
pub fn build_scenario(spec: &ScenarioSpec, base: &Dataset, params: &SplitParams) -> Result<ScenarioData> {
    let labels = base.require_labels("scenario construction")?;
    let c = base.num_classes();
    spec.validate(c, base.schema().canonical_dim())?;
    if !base.schema().is_canonical() {
        return Err(FlekdError::invalid("base dataset must carry the canonical schema"));
    }
    if !(params.holdout_fraction > 0.0 && params.holdout_fraction < 1.0) {
        return Err(FlekdError::invalid("holdout_fraction must lie in (0, 1)"));
    }
    let n_clients = spec.required_clients(c).unwrap_or(params.n_clients);
    if n_clients == 0 {
        return Err(FlekdError::invalid("n_clients must be at least 1"));
    }

    let all: Vec<usize> = (0..base.n_rows()).collect();
    let proxy = sample_proxy_from(base, &all, params.proxy_size, params.minority_class, params.seed)?;
    let (validation, test, pool) =
        holdout_split(labels, c, &proxy.remaining_indices, params.holdout_fraction, params.seed);
    if validation.is_empty() || test.is_empty() {
        return Err(FlekdError::invalid("holdout produced an empty validation or test set"));
    }

    let standardizer = Standardizer::fit(&base.subset(&pool)?)?;
    let scaled = standardizer.apply(base)?;

    let labeled_pool: Vec<(usize, usize)> = pool.iter().map(|&i| (i, labels[i])).collect();
    let partition_seed = derive_seed(params.seed, &[TAG_SCENARIO]);
    let (client_rows, visible): (Vec<Vec<usize>>, Vec<usize>) = match spec {
        ScenarioSpec::Baseline => {
            let p = dirichlet_split(&labeled_pool, c, n_clients, params.alpha, partition_seed)?;
            let dims = vec![base.dim(); n_clients];
            (p.client_indices, dims)
        }
        ScenarioSpec::Dims { group_dims } => {
            let p = dirichlet_split(&labeled_pool, c, n_clients, params.alpha, partition_seed)?;
            let dims = (0..n_clients)
                .map(|i| group_dims[group_of(i, n_clients, group_dims.len())])
                .collect();
            (p.client_indices, dims)
        }
        ScenarioSpec::SampleSize { base: unit, multipliers } => {
            let sizes: Vec<usize> = (0..n_clients)
                .map(|i| unit * multipliers[group_of(i, n_clients, multipliers.len())])
                .collect();
            let need: usize = sizes.iter().sum();
            if need > pool.len() {
                return Err(FlekdError::invalid(format!(
                    "sample_size scenario needs {need} training rows, pool has {}",
                    pool.len()
                )));
            }
            let mut shuffled = pool.clone();
            shuffled.shuffle(&mut rng_for(partition_seed, &[]));
            let mut start = 0;
            let rows = sizes
                .iter()
                .map(|&s| {
                    let mut chunk = shuffled[start..start + s].to_vec();
                    chunk.sort_unstable();
                    start += s;
                    chunk
                })
                .collect();
            (rows, vec![base.dim(); n_clients])
        }
        ScenarioSpec::DropLabel { .. } => {
            let dropped = spec.dropped_labels(c);
            let p = dirichlet_split(&labeled_pool, c, n_clients, params.alpha, partition_seed)?;
            let rows: Vec<Vec<usize>> = p
                .client_indices
                .into_iter()
                .zip(&dropped)
                .map(|(idx, &lost)| idx.into_iter().filter(|&i| labels[i] != lost).collect())
                .collect();
            if let Some(k) = rows.iter().position(Vec::is_empty) {
                return Err(FlekdError::invalid(format!(
                    "client {k} has no rows left after dropping class {}",
                    dropped[k]
                )));
            }
            (rows, vec![base.dim(); n_clients])
        }
    };

    let group_count = match spec {
        ScenarioSpec::Dims { group_dims } => group_dims.len(),
        ScenarioSpec::SampleSize { multipliers, .. } => multipliers.len(),
        _ => 1,
    };
    let clients = client_rows
        .iter()
        .zip(&visible)
        .enumerate()
        .map(|(id, (rows, &dim))| {
            let own = scaled.subset(rows)?;
            let dataset = if dim < base.dim() {
                own.truncate_to_prefix(dim)?.pad_to_canonical()?
            } else {
                own
            };
            Ok(ClientData {
                id,
                group: group_of(id, n_clients, group_count),
                visible_dim: dim,
                dataset,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let assigned: usize = client_rows.iter().map(Vec::len).sum();
    let layout = DataLayout {
        scenario: spec.name().to_string(),
        alpha: params.alpha,
        seed: params.seed,
        clients: client_rows,
        proxy: proxy.proxy_indices.clone(),
        validation: validation.clone(),
        test: test.clone(),
        unused: pool.len() - assigned,
    };
    Ok(ScenarioData {
        clients,
        proxy: scaled.subset(&proxy.proxy_indices)?.without_labels(),
        validation: scaled.subset(&validation)?,
        test: scaled.subset(&test)?,
        standardizer,
        layout,
    })
}
