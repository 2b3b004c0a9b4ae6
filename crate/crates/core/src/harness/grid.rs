//! Runs a list of experiments on one shared dataset and compares each
//! against the single-task baseline.

use rayon::prelude::*;

use super::config::{check_unique_names, ExperimentConfig, TaskMode};
use super::runner::{prepare_data, run_experiment_on, RunResult, SplitName};
use crate::data::{Splits, TASK_COUNT};
use crate::error::{Error, Result};
use crate::metrics::{binarize, mcnemar, McNemarResult};
use crate::PRIMARY_TASK;

#[derive(Debug, Clone, PartialEq)]
pub struct McNemarRow {
    pub experiment: String,
    pub baseline: String,
    pub n: usize,
    pub result: McNemarResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub failure: Option<String>,
    pub selected_epoch: Option<u64>,
    pub itw_epoch: Option<u64>,
    pub train_auc: Option<f64>,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    /// Test AUC of each auxiliary task at the selected epoch.
    pub aux_test_auc: [Option<f64>; TASK_COUNT - 1],
    pub mcnemar: Option<McNemarRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    /// Sorted by experiment name.
    pub rows: Vec<SummaryRow>,
}

impl GridSummary {
    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn mcnemar_rows(&self) -> impl Iterator<Item = &McNemarRow> {
        self.rows.iter().filter_map(|r| r.mcnemar.as_ref())
    }
}

/// Finished grid: per-run results (input order) plus the summary.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub results: Vec<RunResult>,
    pub summary: GridSummary,
}

/// Checks that every experiment reads the same data with the same split.
pub fn check_shared_data(grid: &[ExperimentConfig]) -> Result<()> {
    let Some(first) = grid.first() else {
        return Err(Error::Config("the grid is empty".into()));
    };
    if let Some(other) = grid.iter().find(|c| c.data != first.data) {
        return Err(Error::Config(format!(
            "experiments {:?} and {:?} use different data; paired comparison needs one dataset",
            first.name, other.name
        )));
    }
    check_unique_names(grid)
}

/// Trains every experiment (up to `jobs` at a time) and builds the summary.
pub fn run_grid(grid: &[ExperimentConfig], jobs: usize) -> Result<GridOutcome> {
    check_shared_data(grid)?;
    for cfg in grid {
        cfg.validate()?;
    }
    let splits = prepare_data(&grid[0])?;
    run_grid_on(grid, &splits, jobs)
}

pub fn run_grid_on(grid: &[ExperimentConfig], splits: &Splits, jobs: usize) -> Result<GridOutcome> {
    check_shared_data(grid)?;
    let results: Vec<RunResult> = if jobs <= 1 {
        grid.iter()
            .map(|cfg| run_experiment_on(cfg, splits))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| {
            grid.par_iter()
                .map(|cfg| run_experiment_on(cfg, splits))
                .collect::<Result<_>>()
        })?
    };
    let summary = summarize(&results, splits)?;
    Ok(GridOutcome { results, summary })
}

/// Summary rows sorted by name, with McNemar tests against the first
/// single-task run (by name) for every run that beats it on test AUC.
pub fn summarize(results: &[RunResult], splits: &Splits) -> Result<GridSummary> {
    let mut order: Vec<&RunResult> = results.iter().collect();
    order.sort_by(|a, b| a.name().cmp(b.name()));
    let baseline = order
        .iter()
        .copied()
        .find(|r| r.config.mode == TaskMode::Stl && r.failure.is_none() && r.snapshot.is_some());

    let test_ids: Vec<&str> = splits.test.ids();
    let truth_rows: Vec<usize> = splits
        .test
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.labels[PRIMARY_TASK].is_coded())
        .map(|(i, _)| i)
        .collect();
    let truth: Vec<bool> = truth_rows
        .iter()
        .map(|&i| {
            splits.test.samples()[i].labels[PRIMARY_TASK] == crate::loss::LabelValue::Positive
        })
        .collect();
    let predictions = |r: &RunResult| -> Result<Vec<bool>> {
        let snap = r.snapshot.as_ref().expect("checked by caller");
        if snap.test_logits.rows() != test_ids.len() {
            return Err(Error::Dimension(format!(
                "run {} scored {} test samples, the test split has {}",
                r.name(),
                snap.test_logits.rows(),
                test_ids.len()
            )));
        }
        let logits: Vec<f64> = truth_rows
            .iter()
            .map(|&i| snap.test_logits.get(i, PRIMARY_TASK))
            .collect();
        Ok(binarize(&logits, r.config.training.threshold))
    };

    let mut rows = Vec::with_capacity(order.len());
    for r in order {
        let mut aux = [None; TASK_COUNT - 1];
        for (k, slot) in aux.iter_mut().enumerate() {
            *slot = r.selected_auc(SplitName::Test, k + 1);
        }
        let test_auc = r.test_auc_primary();
        let mcnemar_row = match (baseline, test_auc) {
            (Some(base), Some(auc)) if base.name() != r.name() && r.snapshot.is_some() => {
                match base.test_auc_primary() {
                    Some(base_auc) if auc > base_auc => {
                        let ours = predictions(r)?;
                        let theirs = predictions(base)?;
                        Some(McNemarRow {
                            experiment: r.name().to_string(),
                            baseline: base.name().to_string(),
                            n: truth.len(),
                            result: mcnemar(&ours, &theirs, &truth)?,
                        })
                    }
                    _ => None,
                }
            }
            _ => None,
        };
        rows.push(SummaryRow {
            name: r.name().to_string(),
            failure: r.failure.clone(),
            selected_epoch: r.selected_epoch,
            itw_epoch: r.itw_epoch,
            train_auc: r.selected_auc(SplitName::Train, PRIMARY_TASK),
            val_auc: r.selected_auc(SplitName::Val, PRIMARY_TASK),
            test_auc,
            aux_test_auc: aux,
            mcnemar: mcnemar_row,
        });
    }
    Ok(GridSummary { rows })
}
