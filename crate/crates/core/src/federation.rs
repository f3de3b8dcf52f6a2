//! The communication-round loop: select clients, synchronize the global
//! model, train locally, fuse, and (for FLEKD) distill on the server.

use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientData, Dataset};
use crate::distillation::{distill_round, DistillConfig};
use crate::error::{FlekdError, Result};
use crate::metrics::{evaluate, RoundReport};
use crate::nn::{train_epoch_ce, AdamConfig, AdamState, ModelParams};
use crate::rng::{derive_seed, rng_for, TAG_DISTILL, TAG_LOCAL, TAG_SELECT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Fedavg,
    Flekd,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Fedavg => "fedavg",
            Aggregator::Flekd => "flekd",
        }
    }
}

/// How client parameters are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Weights `n_i / Σ n`.
    #[default]
    Weighted,
    /// Plain mean over participating clients.
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    pub participation_fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub total_rounds: usize,
    pub fusion: FusionMode,
    pub lr0: f64,
    /// Fractional learning-rate reduction per communication round.
    pub lr_decay: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            participation_fraction: 1.0,
            local_epochs: 2,
            batch_size: 64,
            total_rounds: 15,
            fusion: FusionMode::Weighted,
            lr0: 1e-3,
            lr_decay: 0.05,
        }
    }
}

impl RoundConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr0: self.lr0,
            decay: self.lr_decay,
            ..AdamConfig::default()
        }
    }
}

/// A client's private data and its local model. Only `params` ever leaves
/// the client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub dataset: Dataset,
    pub params: ModelParams,
    pub adam: AdamState,
    pub n_samples: usize,
}

impl ClientState {
    pub fn new(data: &ClientData, initial: &ModelParams, adam: AdamConfig) -> Result<Self> {
        if data.dataset.is_empty() {
            return Err(FlekdError::invalid(format!("client {} has no data", data.id)));
        }
        data.dataset.require_labels("client data")?;
        if data.dataset.dim() != initial.dims().input_dim {
            return Err(FlekdError::invalid(format!(
                "client {} data has {} columns, model expects {}",
                data.id,
                data.dataset.dim(),
                initial.dims().input_dim
            )));
        }
        Ok(Self {
            id: data.id,
            dataset: data.dataset.clone(),
            params: initial.clone(),
            adam: AdamState::new(initial, adam),
            n_samples: data.dataset.n_rows(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_params: ModelParams,
    pub round: usize,
    pub history: Vec<RoundReport>,
    /// Fusion output of the first round, before any distillation.
    pub first_fused: Option<ModelParams>,
}

/// `⌈fraction · n⌉` client ids drawn without replacement, returned sorted.
pub fn select_clients(n_clients: usize, fraction: f64, seed: u64, round: usize) -> Result<Vec<usize>> {
    if n_clients == 0 {
        return Err(FlekdError::invalid("no clients to select from"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FlekdError::invalid(format!(
            "participation fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = ((fraction * n_clients as f64).ceil() as usize).clamp(1, n_clients);
    if k == n_clients {
        return Ok((0..n_clients).collect());
    }
    let mut rng = rng_for(seed, &[TAG_SELECT, round as u64]);
    let mut chosen = sample(&mut rng, n_clients, k).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Resets the client to `global`, then runs `epochs` passes of mini-batch
/// Adam on its own data. The learning rate is `lr0 · (1 − decay)^round`.
/// Returns the mean training loss of the last epoch, if any epoch ran.
pub fn local_train(
    client: &mut ClientState,
    global: &ModelParams,
    epochs: usize,
    batch_size: usize,
    round: usize,
    seed: u64,
) -> Result<Option<f64>> {
    if client.dataset.is_empty() {
        return Err(FlekdError::invalid(format!("client {} has no data", client.id)));
    }
    global.ensure_same_shape(&client.params, "synchronize")?;
    client.params = global.clone();
    client.adam.set_ticks(round as u32);
    let labels = client.dataset.require_labels("local training")?.to_vec();
    let mut last = None;
    for epoch in 0..epochs {
        let mut rng = rng_for(seed, &[TAG_LOCAL, round as u64, client.id as u64, epoch as u64]);
        last = Some(train_epoch_ce(
            &mut client.params,
            &mut client.adam,
            client.dataset.features(),
            &labels,
            batch_size,
            &mut rng,
        )?);
    }
    Ok(last)
}

/// Elementwise average of client parameters with weights
/// `counts_i / Σ counts`.
///
/// Models are summed in a canonical order (by count, then by value) as
/// offsets from the first, so identical inputs fuse to themselves exactly
/// and any permutation of the inputs gives bit-identical output.
pub fn fuse_models(params: &[&ModelParams], counts: &[usize]) -> Result<ModelParams> {
    let first = params
        .first()
        .ok_or_else(|| FlekdError::invalid("fusion of zero models"))?;
    if params.len() != counts.len() {
        return Err(FlekdError::invalid(format!(
            "{} models but {} sample counts",
            params.len(),
            counts.len()
        )));
    }
    if counts.contains(&0) {
        return Err(FlekdError::invalid("sample counts must be positive"));
    }
    for p in params {
        p.ensure_same_shape(first, "fusion")?;
    }
    let total: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by(|&a, &b| {
        counts[a].cmp(&counts[b]).then_with(|| {
            params[a]
                .values()
                .zip(params[b].values())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let reference = params[order[0]];
    let mut fused = reference.clone();
    for &i in &order[1..] {
        let w = counts[i] as f64 / total as f64;
        for ((f, &p), &r) in fused.values_mut().zip(params[i].values()).zip(reference.values()) {
            *f += w * (p - r);
        }
    }
    Ok(fused)
}

pub fn fuse_with_mode(params: &[&ModelParams], counts: &[usize], mode: FusionMode) -> Result<ModelParams> {
    match mode {
        FusionMode::Weighted => fuse_models(params, counts),
        FusionMode::Unweighted => fuse_models(params, &vec![1; params.len()]),
    }
}

/// Server-held data the round loop needs beyond the clients themselves.
#[derive(Debug, Clone, Copy)]
pub struct ServerData<'a> {
    pub proxy: &'a Dataset,
    pub validation: &'a Dataset,
    pub test: &'a Dataset,
}

/// Runs `config.total_rounds` communication rounds and reports the global
/// model's test metrics after each.
pub fn run_rounds(
    config: &RoundConfig,
    distill: &DistillConfig,
    clients: &[ClientData],
    server: ServerData<'_>,
    initial: &ModelParams,
    aggregator: Aggregator,
    seed: u64,
) -> Result<ServerState> {
    if clients.is_empty() {
        return Err(FlekdError::invalid("federation needs at least one client"));
    }
    let mut states = clients
        .iter()
        .map(|c| ClientState::new(c, initial, config.adam()))
        .collect::<Result<Vec<_>>>()?;
    let mut server_state = ServerState {
        global_params: initial.clone(),
        round: 0,
        history: Vec::with_capacity(config.total_rounds),
        first_fused: None,
    };

    for round in 0..config.total_rounds {
        let started = Instant::now();
        let in_round = |e: FlekdError| e.in_round(round + 1);
        let selected = select_clients(states.len(), config.participation_fraction, seed, round)
            .map_err(in_round)?;

        let global = server_state.global_params.clone();
        states
            .par_iter_mut()
            .filter(|s| selected.binary_search(&s.id).is_ok())
            .map(|s| {
                local_train(s, &global, config.local_epochs, config.batch_size, round, seed).map(|_| ())
            })
            .collect::<Result<()>>()
            .map_err(in_round)?;

        // Transmit: only parameters and sample counts reach the server.
        let received: Vec<&ModelParams> = selected.iter().map(|&i| &states[i].params).collect();
        let counts: Vec<usize> = selected.iter().map(|&i| states[i].n_samples).collect();
        let fused = fuse_with_mode(&received, &counts, config.fusion).map_err(in_round)?;
        if server_state.first_fused.is_none() {
            server_state.first_fused = Some(fused.clone());
        }

        let mut report_extra = None;
        let next_global = match aggregator {
            Aggregator::Fedavg => fused,
            Aggregator::Flekd => {
                let epochs_done = (round * distill.fine_tune_epochs) as u32;
                let out = distill_round(
                    &fused,
                    &received,
                    server.proxy,
                    server.validation,
                    distill,
                    epochs_done,
                    derive_seed(seed, &[TAG_DISTILL, round as u64]),
                )
                .map_err(in_round)?;
                report_extra = Some((out.weights, out.kl_before, out.kl_after));
                out.params
            }
        };

        let matrix = evaluate(&next_global, server.test).map_err(in_round)?;
        let mut report = RoundReport::from_matrix(round + 1, &matrix);
        report.participants = selected;
        if let Some((weights, before, after)) = report_extra {
            report.ensemble_weights = Some(weights.weights);
            report.teacher_accuracies = Some(weights.accuracies);
            report.kl_before = Some(before);
            report.kl_after = Some(after);
        }
        report.wall_time = started.elapsed();

        server_state.global_params = next_global;
        server_state.round += 1;
        server_state.history.push(report);
    }
    Ok(server_state)
}

/// Trains one client in isolation on the same schedule a federated client
/// follows: `total_rounds` rounds of `local_epochs` epochs, continuing from
/// its own parameters instead of a global model.
pub fn train_local_only(
    client: &ClientData,
    initial: &ModelParams,
    config: &RoundConfig,
    seed: u64,
) -> Result<ModelParams> {
    let mut state = ClientState::new(client, initial, config.adam())?;
    for round in 0..config.total_rounds {
        let own = state.params.clone();
        local_train(&mut state, &own, config.local_epochs, config.batch_size, round, seed)?;
    }
    Ok(state.params)
}
