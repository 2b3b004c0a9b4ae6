use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtlw::data::synth_generate;
use mtlw::harness::{
    emit_outputs, load_config, prepare_data, run_grid_on, DataSource, ExperimentConfig,
    LoadedConfig,
};
use mtlw::{Error, Result};

/// Multi-task loss-weight scheduling experiments.
#[derive(Parser)]
#[command(name = "mtlw", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by a config's [data] section.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides every seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a single experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every experiment of a grid on one shared dataset.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Experiments trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<LoadedConfig> {
    let mut loaded = load_config(path)?;
    if let Some(seed) = seed {
        match &mut loaded {
            LoadedConfig::Single(c) => c.override_seed(seed),
            LoadedConfig::Grid(v) => v.iter_mut().for_each(|c| c.override_seed(seed)),
        }
    }
    Ok(loaded)
}

fn train(experiments: &[ExperimentConfig], out: &Path, jobs: usize) -> Result<()> {
    let splits = prepare_data(&experiments[0])?;
    let outcome = run_grid_on(experiments, &splits, jobs)?;
    emit_outputs(&outcome.results, &outcome.summary, &splits, out)?;
    for row in &outcome.summary.rows {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<8} epoch {:>4}  LC train/val/test {}/{}/{}  p {}{}",
            row.name,
            row.selected_epoch
                .map_or_else(|| "-".into(), |e| e.to_string()),
            fmt(row.train_auc),
            fmt(row.val_auc),
            fmt(row.test_auc),
            fmt(row.mcnemar.as_ref().map(|m| m.result.p_value)),
            row.failure
                .as_ref()
                .map_or_else(String::new, |f| format!("  FAILED: {f}")),
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => {
            let experiments = load(&config, seed)?.into_experiments();
            let DataSource::Synth(synth) = &experiments[0].data.source else {
                return Err(Error::Config(
                    "the [data] section reads a CSV file; nothing to generate".into(),
                ));
            };
            let dataset = synth_generate(synth)?;
            dataset.write_csv(&out)?;
            println!("wrote {} samples to {}", dataset.len(), out.display());
            Ok(())
        }
        Command::Run { config, out, seed } => match load(&config, seed)? {
            LoadedConfig::Single(cfg) => train(&[cfg], &out, 1),
            LoadedConfig::Grid(_) => Err(Error::Config(
                "this configuration describes a grid; use `mtlw grid`".into(),
            )),
        },
        Command::Grid {
            config,
            out,
            seed,
            jobs,
        } => {
            let experiments = load(&config, seed)?.into_experiments();
            train(&experiments, &out, jobs.max(1))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtlw: {e}");
            ExitCode::FAILURE
        }
    }
}
