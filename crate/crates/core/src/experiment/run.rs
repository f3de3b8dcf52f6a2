use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig, Method, Seeds};
use crate::data::{
    build_scenario, load_csv, schema_from_header, synth_generate_with, ClientData, Dataset,
    ScenarioData, SplitParams,
};
use crate::error::Result;
use crate::federation::{run_rounds, train_local_only, Aggregator, ServerData, ServerState};
use crate::metrics::{evaluate, prf1, ConfusionMatrix, Prf1};
use crate::nn::{init_params, ModelParams};

/// Reads or generates the labeled pool every split is drawn from.
pub fn load_base(config: &ExperimentConfig, seeds: &Seeds) -> Result<Dataset> {
    match &config.data {
        DataSource::Synthetic(s) => synth_generate_with(
            s.n_per_class,
            s.num_classes,
            s.canonical_dim,
            s.geometry(),
            seeds.data,
        ),
        DataSource::Csv(c) => {
            let schema = schema_from_header(&c.path)?;
            let loaded = load_csv(&c.path, &schema, true)?;
            let dataset = match &c.class_names {
                Some(names) => loaded.dataset.with_class_names(names.clone())?,
                None => loaded.dataset,
            };
            config.validate_shape(dataset.num_classes(), dataset.dim())?;
            Ok(dataset)
        }
    }
}

pub fn split_params(config: &ExperimentConfig, base: &Dataset, seeds: &Seeds) -> SplitParams {
    SplitParams {
        n_clients: config.resolved_clients(base.num_classes()),
        alpha: config.alpha,
        proxy_size: config.proxy_size,
        minority_class: config.minority_class.resolve(base.class_names()),
        holdout_fraction: config.holdout_fraction,
        seed: seeds.data,
    }
}

pub fn build_data(config: &ExperimentConfig, seeds: &Seeds) -> Result<ScenarioData> {
    let base = load_base(config, seeds)?;
    build_scenario(&config.scenario, &base, &split_params(config, &base, seeds))
}

/// A client model trained without federation, scored on the common server
/// test set restricted to the columns the client can see.
#[derive(Debug, Clone)]
pub struct LocalResult {
    pub client: usize,
    pub group: usize,
    pub visible_dim: usize,
    pub n_samples: usize,
    pub matrix: ConfusionMatrix,
    pub scores: Prf1,
}

pub fn evaluate_local(client: &ClientData, params: &ModelParams, test: &Dataset) -> Result<LocalResult> {
    let masked = test.truncate_to_prefix(client.visible_dim)?.pad_to_canonical()?;
    let matrix = evaluate(params, &masked)?;
    Ok(LocalResult {
        client: client.id,
        group: client.group,
        visible_dim: client.visible_dim,
        n_samples: client.dataset.n_rows(),
        scores: prf1(&matrix),
        matrix,
    })
}

/// All results for one seed set.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seeds: Seeds,
    pub data: ScenarioData,
    pub local_only: Option<Vec<LocalResult>>,
    pub fedavg: Option<ServerState>,
    pub flekd: Option<ServerState>,
}

impl SeedOutcome {
    pub fn server(&self, aggregator: Aggregator) -> Option<&ServerState> {
        match aggregator {
            Aggregator::Fedavg => self.fedavg.as_ref(),
            Aggregator::Flekd => self.flekd.as_ref(),
        }
    }

    pub fn class_names(&self) -> &[String] {
        self.data.test.class_names()
    }

    pub fn final_macro_f1(&self, aggregator: Aggregator) -> Option<f64> {
        self.server(aggregator)?.history.last().map(|r| r.macro_f1)
    }

    pub fn mean_local_macro_f1(&self) -> Option<f64> {
        let locals = self.local_only.as_ref()?;
        if locals.is_empty() {
            return None;
        }
        Some(locals.iter().map(|l| l.scores.macro_f1).sum::<f64>() / locals.len() as f64)
    }
}

/// Runs every configured method on one seed set, in memory.
pub fn run_seed(config: &ExperimentConfig, seeds: Seeds) -> Result<SeedOutcome> {
    let data = build_data(config, &seeds)?;
    let dims = (data.test.dim(), config.hidden_dim, data.test.num_classes());
    let initial = init_params(dims.0, dims.1, dims.2, seeds.init)?;
    let server = ServerData {
        proxy: &data.proxy,
        validation: &data.validation,
        test: &data.test,
    };

    let local_only = if config.runs(Method::LocalOnly) {
        let results = data
            .clients
            .par_iter()
            .map(|c| {
                let params = train_local_only(c, &initial, &config.rounds, seeds.train)?;
                evaluate_local(c, &params, &data.test)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(results)
    } else {
        None
    };

    let federate = |aggregator: Aggregator, method: Method| -> Result<Option<ServerState>> {
        if !config.runs(method) {
            return Ok(None);
        }
        run_rounds(
            &config.rounds,
            &config.distill,
            &data.clients,
            server,
            &initial,
            aggregator,
            seeds.train,
        )
        .map(Some)
    };
    let fedavg = federate(Aggregator::Fedavg, Method::Fedavg)?;
    let flekd = federate(Aggregator::Flekd, Method::Flekd)?;

    Ok(SeedOutcome {
        seeds,
        data,
        local_only,
        fedavg,
        flekd,
    })
}

/// Runs every seed set in order.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<SeedOutcome>> {
    config.validate()?;
    config
        .seed_sets()
        .into_iter()
        .map(|s| run_seed(config, s))
        .collect()
}

/// Mean of `f` over outcomes where it is defined.
pub fn mean_over<F: Fn(&SeedOutcome) -> Option<f64>>(outcomes: &[SeedOutcome], f: F) -> Option<f64> {
    let values: Vec<f64> = outcomes.iter().filter_map(f).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
