//! Result files.
//!
//! | file | rows |
//! |------|------|
//! | `summary.csv` | one per experiment, sorted by name |
//! | `mcnemar.csv` | one per experiment compared with the baseline |
//! | `results_<name>.csv` | `(epoch, split, task)` metrics |
//! | `roc_<name>_<split>.csv` | primary-task ROC at the selected epoch |
//! | `schedule_<name>.csv` | provisional weights at every iteration |
//! | `manifest.json` | the resolved experiments, replayable |
//!
//! Floating-point values use shortest round-trip formatting; missing
//! values are empty fields. Nothing time-dependent is written, so identical
//! inputs give byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::Manifest;
use super::grid::GridSummary;
use super::runner::{RunResult, SplitName};
use crate::data::{Splits, TASK_NAMES};
use crate::error::{Error, Result};
use crate::metrics::{roc_curve, write_roc_csv};
use crate::scheduler::write_trace_csv;
use crate::PRIMARY_TASK;

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let file = create(path)?;
    let mut w = csv_writer(file);
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    let file = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    finish(file, path)
}

pub fn summary_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "name",
        "status",
        "selected_epoch",
        "itw_epoch",
        "train_auc_LC",
        "val_auc_LC",
        "test_auc_LC",
        "mcnemar_p",
    ]
    .map(String::from)
    .into();
    h.extend(TASK_NAMES[1..].iter().map(|t| format!("test_auc_{t}")));
    h
}

pub fn write_summary(summary: &GridSummary, path: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.name.clone(),
                r.failure
                    .as_ref()
                    .map_or_else(|| "ok".to_string(), |_| "failed".to_string()),
                opt(r.selected_epoch),
                opt(r.itw_epoch),
                opt(r.train_auc),
                opt(r.val_auc),
                opt(r.test_auc),
                opt(r.mcnemar.as_ref().map(|m| m.result.p_value)),
            ];
            row.extend(r.aux_test_auc.iter().map(|a| opt(*a)));
            row
        })
        .collect();
    write_rows(path, &summary_header(), &rows)
}

pub fn write_mcnemar(summary: &GridSummary, path: &Path) -> Result<()> {
    let header = ["experiment", "baseline", "n", "b", "c", "chi2", "p_value"].map(String::from);
    let rows: Vec<Vec<String>> = summary
        .mcnemar_rows()
        .map(|m| {
            vec![
                m.experiment.clone(),
                m.baseline.clone(),
                m.n.to_string(),
                m.result.b.to_string(),
                m.result.c.to_string(),
                m.result.chi2.to_string(),
                m.result.p_value.to_string(),
            ]
        })
        .collect();
    write_rows(path, &header, &rows)
}

/// Long-format metrics; `selected` marks the rows of the selected epoch.
pub fn write_results(result: &RunResult, path: &Path) -> Result<()> {
    let header = ["epoch", "phase", "split", "task", "auc", "loss", "selected"].map(String::from);
    let rows: Vec<Vec<String>> = result
        .per_epoch
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                result.epoch_phases[m.epoch as usize].to_string(),
                m.split.to_string(),
                TASK_NAMES[m.task].to_string(),
                opt(m.auc),
                m.loss.to_string(),
                u8::from(result.selected_epoch == Some(m.epoch)).to_string(),
            ]
        })
        .collect();
    write_rows(path, &header, &rows)
}

fn write_roc(result: &RunResult, splits: &Splits, split: SplitName, path: &Path) -> Result<bool> {
    let Some(snap) = &result.snapshot else {
        return Ok(false);
    };
    let (logits, data) = match split {
        SplitName::Val => (&snap.val_logits, &splits.val),
        SplitName::Test => (&snap.test_logits, &splits.test),
        SplitName::Train => return Ok(false),
    };
    let points = match roc_curve(
        &logits.column(PRIMARY_TASK),
        &data.task_labels(PRIMARY_TASK),
    ) {
        Ok(p) => p,
        Err(Error::UndefinedMetric(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    let file = create(path)?;
    write_roc_csv(&points, file)?;
    Ok(true)
}

pub fn write_schedule(result: &RunResult, path: &Path) -> Result<()> {
    let mut file = create(path)?;
    write_trace_csv(
        &result.schedule_trace,
        result.config.base_weights.len(),
        &mut file,
    )?;
    finish(file, path)
}

pub fn manifest_for(results: &[RunResult]) -> Manifest {
    let mut experiments: Vec<_> = results.iter().map(|r| r.config.clone()).collect();
    experiments.sort_by(|a, b| a.name.cmp(&b.name));
    Manifest::new(experiments)
}

/// Writes every per-run file plus the summary, McNemar table and manifest.
/// Returns the paths written, in a deterministic order.
pub fn emit_outputs(
    results: &[RunResult],
    summary: &GridSummary,
    splits: &Splits,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.name().cmp(b.name()));

    let path = out_dir.join("summary.csv");
    write_summary(summary, &path)?;
    written.push(path);
    let path = out_dir.join("mcnemar.csv");
    write_mcnemar(summary, &path)?;
    written.push(path);

    for r in sorted {
        let name = r.name();
        let path = out_dir.join(format!("results_{name}.csv"));
        write_results(r, &path)?;
        written.push(path);
        for split in [SplitName::Val, SplitName::Test] {
            let path = out_dir.join(format!("roc_{name}_{split}.csv"));
            if write_roc(r, splits, split, &path)? {
                written.push(path);
            }
        }
        let path = out_dir.join(format!("schedule_{name}.csv"));
        write_schedule(r, &path)?;
        written.push(path);
    }

    let path = out_dir.join("manifest.json");
    fs::write(&path, manifest_for(results).to_json()).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
