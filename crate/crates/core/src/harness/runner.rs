//! Single training run: scheduled weights, Adam updates, per-epoch evaluation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{DataSource, ExperimentConfig};
use crate::data::{load_csv, split, synth_generate, Dataset, Splits, TASK_COUNT};
use crate::error::{Error, Result};
use crate::loss::masked_task_loss_weighted;
use crate::metrics::auc;
use crate::model::{apply_adam, backward_with_pos_weight, forward, Matrix, Model};
use crate::scheduler::{
    advance_epoch, advance_iteration, provisional_weights, Phase, ScheduleState, TraceRow,
};
use crate::PRIMARY_TASK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// AUC and mean masked BCE for one (epoch, split, task).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetric {
    pub epoch: u64,
    pub split: SplitName,
    pub task: usize,
    /// `None` when the split lacks a coded positive or negative.
    pub auc: Option<f64>,
    pub loss: f64,
}

/// Logits of the selected epoch, kept for ROC curves and paired tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: u64,
    pub val_logits: Matrix,
    pub test_logits: Matrix,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub per_epoch: Vec<EpochMetric>,
    /// Schedule phase in force during each completed epoch.
    pub epoch_phases: Vec<Phase>,
    pub selected_epoch: Option<u64>,
    pub snapshot: Option<Snapshot>,
    pub schedule_trace: Vec<TraceRow>,
    /// First epoch trained under the internal-transfer lock.
    pub itw_epoch: Option<u64>,
    /// Set when training aborted; completed epochs are still reported.
    pub failure: Option<String>,
    pub model: Model,
}

impl RunResult {
    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn seed(&self) -> u64 {
        self.config.training.seed
    }

    pub fn metric(&self, epoch: u64, split: SplitName, task: usize) -> Option<&EpochMetric> {
        self.per_epoch
            .iter()
            .find(|m| m.epoch == epoch && m.split == split && m.task == task)
    }

    /// AUC at the selected epoch.
    pub fn selected_auc(&self, split: SplitName, task: usize) -> Option<f64> {
        self.selected_epoch
            .and_then(|e| self.metric(e, split, task))
            .and_then(|m| m.auc)
    }

    pub fn test_auc_primary(&self) -> Option<f64> {
        self.selected_auc(SplitName::Test, PRIMARY_TASK)
    }

    /// Highest validation AUC of the primary task over completed epochs.
    pub fn best_val_auc_primary(&self) -> Option<f64> {
        self.selected_auc(SplitName::Val, PRIMARY_TASK)
    }
}

/// Loads or generates the dataset and splits it.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let dataset = match &cfg.data.source {
        DataSource::Synth(s) => synth_generate(s)?,
        DataSource::Csv(path) => load_csv(path)?,
    };
    split(&dataset, &cfg.data.split)
}

/// Generates data and trains one experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    let splits = prepare_data(cfg)?;
    run_experiment_on(cfg, &splits)
}

/// Trains one experiment on prepared splits.
///
/// Numerical failures during training do not return `Err`; they end the run
/// early and are recorded in [`RunResult::failure`].
pub fn run_experiment_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<RunResult> {
    let mut cfg = cfg.clone();
    cfg.normalize();
    cfg.model.input_dim = splits.train.feature_dim();
    cfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }

    let hyper = cfg.training.adam();
    let pos_weight = cfg.training.pos_weight.clone();
    let mut model = Model::init(cfg.model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let mut state = ScheduleState::new(cfg.base_weights.clone(), &cfg.pflp);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    let mut result = RunResult {
        config: cfg.clone(),
        per_epoch: Vec::new(),
        epoch_phases: Vec::new(),
        selected_epoch: None,
        snapshot: None,
        schedule_trace: Vec::new(),
        itw_epoch: None,
        failure: None,
        model: model.clone(),
    };
    let mut best_val: Option<f64> = None;

    'epochs: for epoch in 0..cfg.training.max_epochs {
        let phase = state.phase;
        if phase == Phase::ItwLocked && result.itw_epoch.is_none() {
            result.itw_epoch = Some(epoch);
        }
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.training.batch_size) {
            let mut x = splits.train.feature_matrix(rows);
            if cfg.training.feature_jitter > 0.0 {
                jitter(&mut x, cfg.training.feature_jitter, &mut rng);
            }
            let y = splits.train.label_matrix(rows);
            let weights = provisional_weights(&state, &cfg.pflp, &cfg.itw);
            result
                .schedule_trace
                .push(TraceRow::capture(&state, &cfg.pflp, &cfg.itw));
            let step = backward_with_pos_weight(&model, &x, &y, &weights, pos_weight.as_deref())
                .and_then(|pass| apply_adam(&mut model, &pass.gradients, &hyper));
            match step {
                Ok(()) => {}
                Err(e @ Error::Numerical { .. }) => {
                    result.failure = Some(format!(
                        "epoch {epoch}, iteration {}: {e}",
                        state.iteration_in_epoch
                    ));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            state = advance_iteration(&state);
        }

        let mut epoch_metrics = Vec::with_capacity(3 * TASK_COUNT);
        let mut logits_by_split = Vec::with_capacity(3);
        for split_name in SplitName::ALL {
            let data = match split_name {
                SplitName::Train => &splits.train,
                SplitName::Val => &splits.val,
                SplitName::Test => &splits.test,
            };
            match evaluate(&model, data, epoch, split_name, pos_weight.as_deref()) {
                Ok((metrics, logits)) => {
                    epoch_metrics.extend(metrics);
                    logits_by_split.push(logits);
                }
                Err(e @ Error::Numerical { .. }) => {
                    result.failure = Some(format!("epoch {epoch}, evaluating {split_name}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let val_auc = epoch_metrics
            .iter()
            .find(|m| m.split == SplitName::Val && m.task == PRIMARY_TASK)
            .and_then(|m| m.auc);
        result.per_epoch.extend(epoch_metrics);
        result.epoch_phases.push(phase);

        let improved = match (val_auc, best_val) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => result.selected_epoch.is_none(),
        };
        if improved {
            if val_auc.is_some() {
                best_val = val_auc;
            }
            let test_logits = logits_by_split.pop().unwrap();
            let val_logits = logits_by_split.pop().unwrap();
            result.selected_epoch = Some(epoch);
            result.snapshot = Some(Snapshot {
                epoch,
                val_logits,
                test_logits,
            });
        }
        state = advance_epoch(&state, val_auc, &cfg.itw)?;
    }
    result.model = model;
    Ok(result)
}

fn jitter(x: &mut Matrix, sigma: f64, rng: &mut ChaCha8Rng) {
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let noise: f64 = rng.sample(StandardNormal);
            x.set(i, j, x.get(i, j) + sigma * noise);
        }
    }
}

const EVAL_CHUNK: usize = 512;

fn evaluate(
    model: &Model,
    data: &Dataset,
    epoch: u64,
    split: SplitName,
    pos_weight: Option<&[f64]>,
) -> Result<(Vec<EpochMetric>, Matrix)> {
    let tasks = model.task_count();
    let mut logits = Vec::with_capacity(data.len() * tasks);
    let rows: Vec<usize> = (0..data.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let out = forward(model, &data.feature_matrix(chunk))?;
        logits.extend_from_slice(out.as_slice());
    }
    let logits = Matrix::new(data.len(), tasks, logits)?;
    let mut metrics = Vec::with_capacity(tasks);
    for task in 0..tasks {
        let scores = logits.column(task);
        let labels = data.task_labels(task);
        let pw = pos_weight.map_or(1.0, |p| p[task]);
        let (loss, _) = masked_task_loss_weighted(&scores, &labels, pw)?;
        let auc = match auc(&scores, &labels) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        metrics.push(EpochMetric {
            epoch,
            split,
            task,
            auc,
            loss,
        });
    }
    Ok((metrics, logits))
}
