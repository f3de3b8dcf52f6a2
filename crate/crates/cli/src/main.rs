use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use flekd_core::experiment::{
    build_data, evaluate_checkpoint, parse_config, run_experiment, ExperimentConfig, Method, Seeds,
};
use flekd_core::federation::Aggregator;

#[derive(Parser)]
#[command(name = "flekd", version, about = "Federated learning with ensemble knowledge distillation, simulated")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its reports.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Methods to run, overriding the config (repeatable or comma-separated).
        #[arg(long, value_delimiter = ',')]
        aggregator: Vec<String>,
    },
    /// Build the scenario and print its partition as JSON, without training.
    Partition {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a saved model on a labeled CSV.
    Eval { checkpoint: PathBuf, test_csv: PathBuf },
}

#[derive(Args)]
struct Overrides {
    /// Use this value for the data, init and train seeds.
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed_override {
            config.seeds = Seeds::all(seed);
            config.seed_list.clear();
        }
        if let Some(dir) = &self.out_dir {
            config.output_dir = dir.clone();
        }
    }
}

fn load(path: &PathBuf, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut config = parse_config(path).with_context(|| format!("loading {}", path.display()))?;
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn run(config: &ExperimentConfig) -> Result<()> {
    let outcomes = run_experiment(config)?;
    let mut lines = vec![format!("{:<10} {:>10} {:>10} {:>10}", "seed", "local_only", "fedavg", "flekd")];
    for o in &outcomes {
        lines.push(format!(
            "{:<10} {:>10} {:>10} {:>10}",
            o.seeds.data,
            fmt(o.mean_local_macro_f1()),
            fmt(o.final_macro_f1(Aggregator::Fedavg)),
            fmt(o.final_macro_f1(Aggregator::Flekd)),
        ));
    }
    lines.push(format!("reports written to {}", config.output_dir.display()));
    emit(&lines.join("\n"))
}

fn partition(config: &ExperimentConfig, write_file: bool) -> Result<()> {
    let seeds = config.seed_sets()[0];
    let data = build_data(config, &seeds)?;
    let json = serde_json::to_string_pretty(&data.layout)?;
    if write_file {
        fs::create_dir_all(&config.output_dir)
            .with_context(|| format!("creating {}", config.output_dir.display()))?;
        let path = config.output_dir.join("partition.json");
        fs::write(&path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    emit(&json)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            aggregator,
        } => {
            let mut config = load(&config, &overrides)?;
            if !aggregator.is_empty() {
                config.aggregators = aggregator
                    .iter()
                    .map(|a| Method::parse(a.trim()))
                    .collect::<flekd_core::Result<_>>()?;
                config.validate()?;
            }
            run(&config)
        }
        Command::Partition { config, overrides } => {
            let config = load(&config, &overrides)?;
            partition(&config, overrides.out_dir.is_some())
        }
        Command::Eval {
            checkpoint,
            test_csv,
        } => {
            let report = evaluate_checkpoint(&checkpoint, &test_csv)?;
            emit(&serde_json::to_string_pretty(&report)?)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
