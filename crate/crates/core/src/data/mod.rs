//! Datasets, ingestion, synthetic flow features, and the splitters that
//! turn one labeled pool into private client data plus server-held sets.

mod csv_io;
mod dataset;
mod partition;
mod proxy;
mod scenario;
mod synth;

pub use csv_io::{load_csv, schema_from_header, write_csv, LoadedCsv, LABEL_COLUMN};
pub use dataset::{Dataset, FeatureSchema, Standardizer};
pub use partition::{dirichlet_partition, PartitionSpec, MAX_EMPTY_CLIENT_RETRIES};
pub use proxy::{proxy_class_counts, sample_proxy, ProxySample, DEFAULT_PROXY_SIZE};
pub use scenario::{
    build_scenario, default_group_dims, default_multipliers, ClientData, DataLayout, ScenarioData,
    ScenarioSpec, SplitParams,
};
pub use synth::{
    default_class_names, synth_generate, synth_generate_with, SynthGeometry, CICIDS2019_CLASSES,
    DEFAULT_SEPARATION, DEFAULT_TAIL_COLUMNS, DEFAULT_TAIL_GAIN,
};
