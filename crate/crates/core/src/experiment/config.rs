use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::data::{
    ScenarioSpec, SynthGeometry, DEFAULT_PROXY_SIZE, DEFAULT_SEPARATION, DEFAULT_TAIL_COLUMNS,
    DEFAULT_TAIL_GAIN,
};
use crate::distillation::DistillConfig;
use crate::error::{FlekdError, Result};
use crate::federation::RoundConfig;
use crate::nn::DEFAULT_HIDDEN;

pub const DEFAULT_CLIENTS: usize = 9;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_HOLDOUT: f64 = 0.2;
pub const DEFAULT_TARGET_F1: f64 = 0.90;

/// Named Dirichlet concentrations: mild, moderate and severe label skew.
pub const ALPHA_PRESETS: [(&str, f64); 3] = [("mild", 10.0), ("moderate", 1.0), ("severe", 0.5)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSource {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub canonical_dim: usize,
    pub separation: f64,
    pub tail_columns: usize,
    pub tail_gain: f64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self {
            n_per_class: 1000,
            num_classes: 7,
            canonical_dim: 82,
            separation: DEFAULT_SEPARATION,
            tail_columns: DEFAULT_TAIL_COLUMNS,
            tail_gain: DEFAULT_TAIL_GAIN,
        }
    }
}

impl SyntheticSource {
    pub fn geometry(&self) -> SynthGeometry {
        SynthGeometry {
            separation: self.separation,
            tail_columns: self.tail_columns,
            tail_gain: self.tail_gain,
        }
    }
}

/// A preprocessed flow table: feature columns named in the header, then an
/// integer `label` column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

/// Which class the proxy set under-samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MinoritySetting {
    Class(usize),
    Keyword(MinorityKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinorityKeyword {
    /// The class named `UDPLag` if there is one, otherwise none.
    Auto,
    None,
}

impl Default for MinoritySetting {
    fn default() -> Self {
        MinoritySetting::Keyword(MinorityKeyword::Auto)
    }
}

impl MinoritySetting {
    pub fn resolve(&self, class_names: &[String]) -> Option<usize> {
        match self {
            MinoritySetting::Class(c) => Some(*c),
            MinoritySetting::Keyword(MinorityKeyword::None) => None,
            MinoritySetting::Keyword(MinorityKeyword::Auto) => class_names
                .iter()
                .position(|n| n.eq_ignore_ascii_case("udplag")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LocalOnly,
    Fedavg,
    Flekd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::LocalOnly, Method::Fedavg, Method::Flekd];

    pub fn name(self) -> &'static str {
        match self {
            Method::LocalOnly => "local_only",
            Method::Fedavg => "fedavg",
            Method::Flekd => "flekd",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                FlekdError::config("aggregators", format!("unknown aggregator `{s}`"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Synthetic generation and every data split.
    pub data: u64,
    /// Initial global model.
    pub init: u64,
    /// Client selection, batch order and fine-tuning.
    pub train: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            data: seed,
            init: seed,
            train: seed,
        }
    }
}

fn default_aggregators() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

fn default_proxy() -> usize {
    DEFAULT_PROXY_SIZE
}

fn default_holdout() -> f64 {
    DEFAULT_HOLDOUT
}

fn default_target() -> f64 {
    DEFAULT_TARGET_F1
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/flekd")
}

/// Accepts a positive number or one of [`ALPHA_PRESETS`].
fn alpha_value<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Preset(String),
    }
    match Repr::deserialize(de)? {
        Repr::Number(v) => Ok(v),
        Repr::Preset(name) => ALPHA_PRESETS
            .iter()
            .find(|(p, _)| *p == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| {
                serde::de::Error::custom(format!(
                    "unknown alpha preset `{name}` (expected mild, moderate or severe)"
                ))
            }),
    }
}

/// Everything one experiment needs. Serializes back to the same JSON
/// schema it parses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Defaults to 9, or to the count a drop_label scenario dictates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_clients: Option<usize>,
    #[serde(default = "default_alpha", deserialize_with = "alpha_value")]
    pub alpha: f64,
    #[serde(default)]
    pub scenario: ScenarioSpec,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_proxy")]
    pub proxy_size: usize,
    #[serde(default)]
    pub minority_class: MinoritySetting,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub rounds: RoundConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default = "default_aggregators")]
    pub aggregators: Vec<Method>,
    #[serde(default)]
    pub seeds: Seeds,
    /// When non-empty, the experiment repeats once per entry with every
    /// seed set to that entry, and `seeds` is ignored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed_list: Vec<u64>,
    /// Macro-F1 level whose first crossing is reported per aggregator.
    #[serde(default = "default_target")]
    pub target_macro_f1: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// A config with every default and the given data source.
    pub fn with_data(data: DataSource) -> Self {
        Self {
            data,
            n_clients: None,
            alpha: DEFAULT_ALPHA,
            scenario: ScenarioSpec::Baseline,
            hidden_dim: DEFAULT_HIDDEN,
            proxy_size: DEFAULT_PROXY_SIZE,
            minority_class: MinoritySetting::default(),
            holdout_fraction: DEFAULT_HOLDOUT,
            rounds: RoundConfig::default(),
            distill: DistillConfig::default(),
            aggregators: default_aggregators(),
            seeds: Seeds::default(),
            seed_list: Vec::new(),
            target_macro_f1: DEFAULT_TARGET_F1,
            output_dir: default_output(),
        }
    }

    /// Seed sets in run order.
    pub fn seed_sets(&self) -> Vec<Seeds> {
        if self.seed_list.is_empty() {
            vec![self.seeds]
        } else {
            self.seed_list.iter().map(|&s| Seeds::all(s)).collect()
        }
    }

    pub fn runs(&self, method: Method) -> bool {
        self.aggregators.contains(&method)
    }

    /// Client count after applying scenario constraints.
    pub fn resolved_clients(&self, num_classes: usize) -> usize {
        self.scenario
            .required_clients(num_classes)
            .or(self.n_clients)
            .unwrap_or(DEFAULT_CLIENTS)
    }

    /// Checks every field that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FlekdError::config(key, format!("must be positive and finite, got {v}")))
            }
        };
        let nonzero = |key: &str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(FlekdError::config(key, "must be at least 1"))
            }
        };
        let fraction = |key: &str, v: f64, lo_open: bool, hi_open: bool| {
            let lo = if lo_open { v > 0.0 } else { v >= 0.0 };
            let hi = if hi_open { v < 1.0 } else { v <= 1.0 };
            if lo && hi {
                Ok(())
            } else {
                Err(FlekdError::config(key, format!("out of range: {v}")))
            }
        };

        match &self.data {
            DataSource::Synthetic(s) => {
                nonzero("data.synthetic.n_per_class", s.n_per_class)?;
                nonzero("data.synthetic.num_classes", s.num_classes)?;
                nonzero("data.synthetic.canonical_dim", s.canonical_dim)?;
                if s.num_classes > s.canonical_dim {
                    return Err(FlekdError::config(
                        "data.synthetic.num_classes",
                        "cannot exceed canonical_dim",
                    ));
                }
                if !(s.separation >= 0.0 && s.separation.is_finite()) {
                    return Err(FlekdError::config(
                        "data.synthetic.separation",
                        "must be finite and non-negative",
                    ));
                }
                positive("data.synthetic.tail_gain", s.tail_gain)?;
                self.validate_shape(s.num_classes, s.canonical_dim)?;
            }
            DataSource::Csv(c) => {
                if c.path.as_os_str().is_empty() {
                    return Err(FlekdError::config("data.csv.path", "must not be empty"));
                }
                if let Some(names) = &c.class_names {
                    if names.is_empty() {
                        return Err(FlekdError::config("data.csv.class_names", "must not be empty"));
                    }
                }
            }
        }

        if let Some(n) = self.n_clients {
            nonzero("n_clients", n)?;
            if let ScenarioSpec::DropLabel { dropped: Some(d) } = &self.scenario {
                if d.len() != n {
                    return Err(FlekdError::config(
                        "n_clients",
                        format!("drop_label lists {} clients but n_clients is {n}", d.len()),
                    ));
                }
            }
        }
        positive("alpha", self.alpha)?;
        nonzero("hidden_dim", self.hidden_dim)?;
        nonzero("proxy_size", self.proxy_size)?;
        fraction("holdout_fraction", self.holdout_fraction, true, true)?;
        fraction("target_macro_f1", self.target_macro_f1, false, false)?;

        let r = &self.rounds;
        fraction("rounds.participation_fraction", r.participation_fraction, true, false)?;
        nonzero("rounds.batch_size", r.batch_size)?;
        positive("rounds.lr0", r.lr0)?;
        fraction("rounds.lr_decay", r.lr_decay, false, true)?;

        let d = &self.distill;
        positive("distill.kd_temperature", d.kd_temperature)?;
        positive("distill.dt", d.dt)?;
        nonzero("distill.batch_size", d.batch_size)?;
        positive("distill.lr0", d.lr0)?;
        fraction("distill.lr_decay", d.lr_decay, false, true)?;

        if self.aggregators.is_empty() {
            return Err(FlekdError::config("aggregators", "must name at least one method"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.aggregators.iter().find(|m| !seen.insert(**m)) {
            return Err(FlekdError::config("aggregators", format!("`{}` listed twice", dup.name())));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(FlekdError::config("output_dir", "must not be empty"));
        }
        Ok(())
    }

    /// Checks that need the class count and schema width; run again once a
    /// CSV source has been read.
    pub fn validate_shape(&self, num_classes: usize, canonical_dim: usize) -> Result<()> {
        self.scenario
            .validate(num_classes, canonical_dim)
            .map_err(|e| FlekdError::config("scenario", strip_prefix(e)))?;
        if let ScenarioSpec::DropLabel { dropped: None } = self.scenario {
            if let Some(n) = self.n_clients {
                if n != num_classes {
                    return Err(FlekdError::config(
                        "n_clients",
                        format!("drop_label needs one client per class ({num_classes}), got {n}"),
                    ));
                }
            }
        }
        if let MinoritySetting::Class(c) = self.minority_class {
            if c >= num_classes {
                return Err(FlekdError::config(
                    "minority_class",
                    format!("class {c} out of range for {num_classes} classes"),
                ));
            }
        }
        if self.proxy_size < num_classes {
            return Err(FlekdError::config(
                "proxy_size",
                format!("needs at least one row per class ({num_classes})"),
            ));
        }
        Ok(())
    }
}

fn strip_prefix(e: FlekdError) -> String {
    match e {
        FlekdError::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

/// Parses and validates a JSON config held in memory.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        let key = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
            .unwrap_or("<root>")
            .to_string();
        FlekdError::Config { key, message }
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads a config file. Relative CSV paths resolve against the file's
/// directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| FlekdError::io(path, e))?;
    let mut config = parse_config_str(&text)?;
    if let DataSource::Csv(csv) = &mut config.data {
        if csv.path.is_relative() {
            if let Some(dir) = path.parent() {
                csv.path = dir.join(&csv.path);
            }
        }
    }
    Ok(config)
}

pub fn to_json(config: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(config)?)
}
