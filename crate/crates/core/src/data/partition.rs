use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{FlekdError, Result};
use crate::rng::{rng_for, SimRng, TAG_PARTITION};

/// Upper bound on redraws of a class's proportion vector when a client
/// would otherwise be left without rows.
pub const MAX_EMPTY_CLIENT_RETRIES: usize = 100;

/// Per-client row indices. Index lists are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub client_indices: Vec<Vec<usize>>,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn n_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn total_rows(&self) -> usize {
        self.client_indices.iter().map(Vec::len).sum()
    }
}

/// `Dir(α·1)` sampled as normalized Gamma(α, 1) draws.
fn sample_dirichlet(rng: &mut SimRng, n: usize, alpha: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // Very small alpha can underflow every draw.
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

/// Splits `rows` into consecutive chunks whose sizes follow `proportions`,
/// using rounded cumulative cut points.
fn split_by_proportions(rows: &[usize], proportions: &[f64]) -> Vec<Vec<usize>> {
    let n = rows.len();
    let mut out = Vec::with_capacity(proportions.len());
    let mut acc = 0.0;
    let mut start = 0;
    for (k, p) in proportions.iter().enumerate() {
        acc += p;
        let end = if k + 1 == proportions.len() {
            n
        } else {
            ((acc * n as f64).round() as usize).clamp(start, n)
        };
        out.push(rows[start..end].to_vec());
        start = end;
    }
    out
}

/// Tiny classes can land on the same client under every redraw, since
/// rounded cut points put a single row at the median client. Each client
/// still empty then takes the highest row of the currently largest client.
fn fill_empty_clients(clients: &mut [Vec<usize>]) {
    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        let donor = (0..clients.len())
            .max_by_key(|&i| (clients[i].len(), std::cmp::Reverse(i)))
            .expect("at least one client");
        debug_assert!(clients[donor].len() > 1, "fewer rows than clients");
        let row = clients[donor].pop().expect("donor has rows");
        clients[empty].push(row);
    }
}

/// Dirichlet label-skew split over an explicit set of `(row, label)` pairs.
/// Rows keep their identifiers, so callers can partition a sub-pool of a
/// larger dataset.
pub(crate) fn dirichlet_split(
    rows: &[(usize, usize)],
    num_classes: usize,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionSpec> {
    if n_clients == 0 {
        return Err(FlekdError::invalid("n_clients must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(FlekdError::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if rows.len() < n_clients {
        return Err(FlekdError::invalid(format!(
            "{} rows cannot cover {n_clients} clients",
            rows.len()
        )));
    }
    let mut rng = rng_for(seed, &[TAG_PARTITION]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &(row, label) in rows {
        by_class[label].push(row);
    }
    for class_rows in by_class.iter_mut() {
        class_rows.shuffle(&mut rng);
    }
    let last_class = by_class
        .iter()
        .rposition(|r| !r.is_empty())
        .expect("rows is non-empty");

    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (class, class_rows) in by_class.iter().enumerate() {
        if class_rows.is_empty() {
            continue;
        }
        let mut chunks = split_by_proportions(class_rows, &sample_dirichlet(&mut rng, n_clients, alpha));
        if class == last_class {
            let mut retries = 0;
            while clients
                .iter()
                .zip(&chunks)
                .any(|(have, add)| have.is_empty() && add.is_empty())
            {
                if retries == MAX_EMPTY_CLIENT_RETRIES {
                    break;
                }
                chunks = split_by_proportions(class_rows, &sample_dirichlet(&mut rng, n_clients, alpha));
                retries += 1;
            }
        }
        for (client, chunk) in clients.iter_mut().zip(chunks) {
            client.extend(chunk);
        }
    }
    for client in clients.iter_mut() {
        client.sort_unstable();
    }
    fill_empty_clients(&mut clients);
    Ok(PartitionSpec {
        client_indices: clients,
        alpha,
        seed,
    })
}

/// For each class, draws client proportions from `Dir(α·1)` and splits the
/// class's rows accordingly. Smaller `alpha` gives more skewed clients.
pub fn dirichlet_partition(
    dataset: &Dataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionSpec> {
    let labels = dataset.require_labels("dirichlet partition")?;
    let rows: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    dirichlet_split(&rows, dataset.num_classes(), n_clients, alpha, seed)
}
