//! Experiment presets, training runs, grids and result files.

pub mod config;
pub mod grid;
pub mod output;
pub mod runner;

pub use config::{
    all_presets, load_config, parse_config, DataConfig, DataSource, ExperimentConfig, LoadedConfig,
    Manifest, Preset, TaskMode, TrainingConfig, PRESETS,
};
pub use grid::{
    run_grid, run_grid_on, summarize, GridOutcome, GridSummary, McNemarRow, SummaryRow,
};
pub use output::emit_outputs;
pub use runner::{
    prepare_data, run_experiment, run_experiment_on, EpochMetric, RunResult, Snapshot, SplitName,
};
