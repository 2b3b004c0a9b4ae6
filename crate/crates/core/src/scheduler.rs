//! Per-iteration loss weights: periodic focusing and the internal-transfer lock.
//!
//! The schedule is a small state machine:
//!
//! ```text
//!   PflpActive --plateau / fixed epoch--> ItwLocked
//!   Plain      --plateau / fixed epoch--> ItwLocked
//! ```
//!
//! `ItwLocked` is absorbing. While focusing is active, the iteration
//! counter selects one focus task per window of `window_iterations`
//! batches; the focus task keeps its base weight and every other task is
//! multiplied by `damping_factor`. Each window is derived directly from the
//! base weights. The counter resets at every epoch boundary, so each epoch
//! starts on the first entry of `focus_order` (the primary task).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::WeightVector;
use crate::PRIMARY_TASK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PflpConfig {
    pub enabled: bool,
    pub window_iterations: u64,
    pub damping_factor: f64,
    /// Task visiting order; empty means `0, 1, ..., task_count - 1`.
    pub focus_order: Vec<usize>,
}

impl Default for PflpConfig {
    fn default() -> Self {
        PflpConfig {
            enabled: true,
            window_iterations: 20,
            damping_factor: 0.1,
            focus_order: Vec::new(),
        }
    }
}

impl PflpConfig {
    pub fn disabled() -> Self {
        PflpConfig {
            enabled: false,
            ..PflpConfig::default()
        }
    }

    pub fn validate(&self, task_count: usize) -> Result<()> {
        if self.window_iterations == 0 {
            return Err(Error::Config("pflp.window_iterations must be >= 1".into()));
        }
        if !(self.damping_factor > 0.0 && self.damping_factor < 1.0) {
            return Err(Error::Config(format!(
                "pflp.damping_factor must lie in (0, 1), got {}",
                self.damping_factor
            )));
        }
        if !self.focus_order.is_empty() {
            let mut seen = vec![false; task_count];
            let valid = self.focus_order.len() == task_count
                && self
                    .focus_order
                    .iter()
                    .all(|&t| t < task_count && !std::mem::replace(&mut seen[t], true));
            if !valid {
                return Err(Error::Config(format!(
                    "pflp.focus_order {:?} is not a permutation of 0..{task_count}",
                    self.focus_order
                )));
            }
            if self.focus_order[0] != PRIMARY_TASK {
                return Err(Error::Config(
                    "pflp.focus_order must start with the primary task".into(),
                ));
            }
        }
        Ok(())
    }

    /// Focus task for a given iteration within the epoch.
    pub fn focus_task(&self, iteration_in_epoch: u64, task_count: usize) -> usize {
        let slot = ((iteration_in_epoch / self.window_iterations) % task_count as u64) as usize;
        if self.focus_order.is_empty() {
            slot
        } else {
            self.focus_order[slot]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItwMode {
    Auto,
    FixedEpoch,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItwConfig {
    pub mode: ItwMode,
    /// Absolute weight given to every auxiliary task once locked.
    pub aux_weight: f64,
    pub patience_epochs: u32,
    pub min_delta: f64,
    pub fixed_epoch: Option<u64>,
}

impl Default for ItwConfig {
    fn default() -> Self {
        ItwConfig {
            mode: ItwMode::Off,
            aux_weight: 0.1,
            patience_epochs: 10,
            min_delta: 0.005,
            fixed_epoch: None,
        }
    }
}

impl ItwConfig {
    pub fn off() -> Self {
        ItwConfig::default()
    }

    pub fn auto() -> Self {
        ItwConfig {
            mode: ItwMode::Auto,
            ..ItwConfig::default()
        }
    }

    pub fn at_epoch(epoch: u64) -> Self {
        ItwConfig {
            mode: ItwMode::FixedEpoch,
            fixed_epoch: Some(epoch),
            ..ItwConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.aux_weight > 0.0 && self.aux_weight.is_finite()) {
            return Err(Error::Config(format!(
                "itw.aux_weight must be positive, got {}",
                self.aux_weight
            )));
        }
        if self.patience_epochs == 0 {
            return Err(Error::Config("itw.patience_epochs must be >= 1".into()));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(Error::Config(format!(
                "itw.min_delta must be >= 0, got {}",
                self.min_delta
            )));
        }
        match (self.mode, self.fixed_epoch) {
            (ItwMode::FixedEpoch, None) => Err(Error::Config(
                "itw.fixed_epoch is required when mode = \"fixed_epoch\"".into(),
            )),
            (ItwMode::Auto | ItwMode::Off, Some(_)) => Err(Error::Config(
                "itw.fixed_epoch is only allowed when mode = \"fixed_epoch\"".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    PflpActive,
    Plain,
    ItwLocked,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::PflpActive => "PFLP_ACTIVE",
            Phase::Plain => "PLAIN",
            Phase::ItwLocked => "ITW_LOCKED",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PFLP_ACTIVE" => Ok(Phase::PflpActive),
            "PLAIN" => Ok(Phase::Plain),
            "ITW_LOCKED" => Ok(Phase::ItwLocked),
            other => Err(Error::Validation(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub phase: Phase,
    pub base_weights: WeightVector,
    pub iteration_in_epoch: u64,
    pub epoch: u64,
    /// Best validation AUC seen so far; `-inf` before the first epoch.
    pub best_val_auc: f64,
    pub epochs_since_best: u32,
}

impl ScheduleState {
    pub fn new(base_weights: WeightVector, pflp: &PflpConfig) -> Self {
        ScheduleState {
            phase: if pflp.enabled {
                Phase::PflpActive
            } else {
                Phase::Plain
            },
            base_weights,
            iteration_in_epoch: 0,
            epoch: 0,
            best_val_auc: f64::NEG_INFINITY,
            epochs_since_best: 0,
        }
    }

    pub fn task_count(&self) -> usize {
        self.base_weights.len()
    }

    /// Focus task of the current iteration, if focusing is active.
    pub fn focus_task(&self, pflp: &PflpConfig) -> Option<usize> {
        (self.phase == Phase::PflpActive)
            .then(|| pflp.focus_task(self.iteration_in_epoch, self.task_count()))
    }
}

/// Loss weights to apply at the current iteration.
pub fn provisional_weights(
    state: &ScheduleState,
    pflp: &PflpConfig,
    itw: &ItwConfig,
) -> WeightVector {
    let base = state.base_weights.as_slice();
    let weights = match state.phase {
        Phase::Plain => base.to_vec(),
        Phase::PflpActive => {
            let focus = pflp.focus_task(state.iteration_in_epoch, base.len());
            base.iter()
                .enumerate()
                .map(|(t, &w)| {
                    if t == focus {
                        w
                    } else {
                        pflp.damping_factor * w
                    }
                })
                .collect()
        }
        Phase::ItwLocked => base
            .iter()
            .enumerate()
            .map(|(t, &w)| if t == PRIMARY_TASK { w } else { itw.aux_weight })
            .collect(),
    };
    WeightVector::from_trusted(weights)
}

pub fn advance_iteration(state: &ScheduleState) -> ScheduleState {
    ScheduleState {
        iteration_in_epoch: state.iteration_in_epoch + 1,
        ..state.clone()
    }
}

/// True once `epochs_since_best` reaches the configured patience.
pub fn plateau_detect(_best_val_auc: f64, epochs_since_best: u32, itw: &ItwConfig) -> bool {
    epochs_since_best >= itw.patience_epochs
}

/// Closes an epoch: resets the focus loop, updates plateau bookkeeping and
/// possibly locks the schedule.
///
/// `val_primary_auc = None` marks the AUC as unavailable; such an epoch
/// counts as one without improvement.
pub fn advance_epoch(
    state: &ScheduleState,
    val_primary_auc: Option<f64>,
    itw: &ItwConfig,
) -> Result<ScheduleState> {
    if let Some(auc) = val_primary_auc {
        if !(0.0..=1.0).contains(&auc) {
            return Err(Error::Validation(format!(
                "validation AUC {auc} lies outside [0, 1]"
            )));
        }
    }
    let mut next = state.clone();
    next.iteration_in_epoch = 0;
    next.epoch += 1;
    match val_primary_auc {
        Some(auc) if auc > state.best_val_auc + itw.min_delta => {
            next.best_val_auc = auc;
            next.epochs_since_best = 0;
        }
        _ => next.epochs_since_best += 1,
    }
    if next.phase != Phase::ItwLocked {
        let lock = match itw.mode {
            ItwMode::Off => false,
            ItwMode::Auto => plateau_detect(next.best_val_auc, next.epochs_since_best, itw),
            ItwMode::FixedEpoch => itw.fixed_epoch.is_some_and(|e| next.epoch >= e),
        };
        if lock {
            next.phase = Phase::ItwLocked;
        }
    }
    Ok(next)
}

/// One row of the schedule audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: u64,
    pub iteration: u64,
    pub focus_task: Option<usize>,
    pub weights: Vec<f64>,
    pub phase: Phase,
}

impl TraceRow {
    pub fn capture(state: &ScheduleState, pflp: &PflpConfig, itw: &ItwConfig) -> Self {
        TraceRow {
            epoch: state.epoch,
            iteration: state.iteration_in_epoch,
            focus_task: state.focus_task(pflp),
            weights: provisional_weights(state, pflp, itw).into(),
            phase: state.phase,
        }
    }
}

/// Writes `epoch,iteration,focus_task,w_0..w_{T-1},phase`. A missing focus
/// task is written as `-`; weights use shortest round-trip formatting.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], task_count: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epoch".to_string(), "iteration".into(), "focus_task".into()];
    header.extend((0..task_count).map(|t| format!("w_{t}")));
    header.push("phase".into());
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let mut rec = vec![
            row.epoch.to_string(),
            row.iteration.to_string(),
            row.focus_task
                .map_or_else(|| "-".to_string(), |t| t.to_string()),
        ];
        rec.extend(row.weights.iter().map(|x| x.to_string()));
        rec.push(row.phase.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Validation(format!("writing trace: {e}")))?;
    Ok(())
}

/// Parses a trace written by [`write_trace_csv`].
pub fn read_trace_csv<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.len() < 5 {
        return Err(Error::Parse {
            line: 1,
            message: "trace header is too short".into(),
        });
    }
    let tasks = headers.len() - 4;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(csv_err)?;
        let parse_err = |what: &str| Error::Parse {
            line,
            message: format!("bad {what}"),
        };
        let focus = match &rec[2] {
            "-" => None,
            s => Some(s.parse().map_err(|_| parse_err("focus_task"))?),
        };
        let weights = (0..tasks)
            .map(|t| rec[3 + t].parse::<f64>().map_err(|_| parse_err("weight")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TraceRow {
            epoch: rec[0].parse().map_err(|_| parse_err("epoch"))?,
            iteration: rec[1].parse().map_err(|_| parse_err("iteration"))?,
            focus_task: focus,
            weights,
            phase: rec[3 + tasks].parse()?,
        });
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}
