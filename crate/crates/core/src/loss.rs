//! Masked binary cross-entropy and the weighted multi-task total loss.
//!
//! Every task head emits a raw logit. Its loss is the mean BCE over the
//! samples that actually carry a label for that task; samples labelled
//! [`LabelValue::NotCoded`] contribute nothing. A task with no coded sample
//! in the batch contributes zero loss and zero gradient.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Matrix;

/// Integer code used on disk for a missing label.
pub const NOT_CODED: i32 = -999;

/// One task label: negative, positive, or not coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelValue {
    Negative,
    Positive,
    NotCoded,
}

impl LabelValue {
    pub fn encoded(self) -> i32 {
        match self {
            LabelValue::Negative => 0,
            LabelValue::Positive => 1,
            LabelValue::NotCoded => NOT_CODED,
        }
    }

    pub fn from_encoded(code: i32) -> Result<Self> {
        match code {
            0 => Ok(LabelValue::Negative),
            1 => Ok(LabelValue::Positive),
            NOT_CODED => Ok(LabelValue::NotCoded),
            other => Err(Error::Validation(format!(
                "label {other} is not one of 0, 1, {NOT_CODED}"
            ))),
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            LabelValue::Positive
        } else {
            LabelValue::Negative
        }
    }

    pub fn is_coded(self) -> bool {
        self != LabelValue::NotCoded
    }

    /// `Some(true)` for positive, `Some(false)` for negative, `None` if missing.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            LabelValue::Negative => Some(false),
            LabelValue::Positive => Some(true),
            LabelValue::NotCoded => None,
        }
    }
}

impl fmt::Display for LabelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.encoded())
    }
}

/// Ordered per-task loss weights; index 0 is the primary task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("weight vector is empty".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::Config(format!(
                "loss weight {i} is {w}; weights must be finite and non-negative"
            )));
        }
        if weights[0] <= 0.0 {
            return Err(Error::Config(
                "the primary task weight must be strictly positive".into(),
            ));
        }
        Ok(WeightVector(weights))
    }

    /// Primary weight followed by `task_count - 1` copies of `aux`.
    pub fn primary_and_aux(primary: f64, aux: f64, task_count: usize) -> Result<Self> {
        let mut w = vec![aux; task_count.max(1)];
        w[0] = primary;
        WeightVector::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn primary(&self) -> f64 {
        self.0[0]
    }

    /// Multiplies every entry by `factor` (must be positive).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        WeightVector::new(self.0.iter().map(|w| w * factor).collect())
    }

    /// Builds a vector without re-checking invariants; callers guarantee them.
    pub(crate) fn from_trusted(weights: Vec<f64>) -> Self {
        debug_assert!(!weights.is_empty() && weights[0] > 0.0);
        WeightVector(weights)
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        WeightVector::new(value)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Per-task masked losses and their weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLossReport {
    pub per_task_loss: Vec<f64>,
    pub per_task_coded_count: Vec<usize>,
    pub total: f64,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a raw logit against a 0/1 label.
pub fn bce_from_logit(logit: f64, positive: bool) -> Result<f64> {
    bce_weighted(logit, positive, 1.0)
}

/// BCE with the positive term scaled by `pos_weight`.
pub fn bce_weighted(logit: f64, positive: bool, pos_weight: f64) -> Result<f64> {
    if !logit.is_finite() {
        return Err(Error::numerical("logit", format!("got {logit}")));
    }
    Ok(if positive {
        pos_weight * softplus(-logit)
    } else {
        softplus(logit)
    })
}

/// Derivative of [`bce_weighted`] with respect to the logit.
pub(crate) fn bce_grad(logit: f64, positive: bool, pos_weight: f64) -> f64 {
    if positive {
        -pos_weight * sigmoid(-logit)
    } else {
        sigmoid(logit)
    }
}

/// Mean BCE over the coded entries of one task column.
///
/// Returns `(0.0, 0)` when nothing is coded.
pub fn masked_task_loss(logits: &[f64], labels: &[LabelValue]) -> Result<(f64, usize)> {
    masked_task_loss_weighted(logits, labels, 1.0)
}

pub fn masked_task_loss_weighted(
    logits: &[f64],
    labels: &[LabelValue],
    pos_weight: f64,
) -> Result<(f64, usize)> {
    if logits.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logits against {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut sum = 0.0;
    let mut coded = 0usize;
    for (&z, &label) in logits.iter().zip(labels) {
        if let Some(y) = label.as_bool() {
            sum += bce_weighted(z, y, pos_weight)?;
            coded += 1;
        }
    }
    if coded == 0 {
        Ok((0.0, 0))
    } else {
        Ok((sum / coded as f64, coded))
    }
}

/// Weighted sum of per-task masked losses.
pub fn total_loss(
    logits: &Matrix,
    labels: &Matrix<LabelValue>,
    weights: &WeightVector,
) -> Result<TaskLossReport> {
    total_loss_with_pos_weight(logits, labels, weights, None)
}

/// [`total_loss`] with an optional per-task positive-class weight.
pub fn total_loss_with_pos_weight(
    logits: &Matrix,
    labels: &Matrix<LabelValue>,
    weights: &WeightVector,
    pos_weight: Option<&[f64]>,
) -> Result<TaskLossReport> {
    check_loss_shapes(logits, labels, weights, pos_weight)?;
    let tasks = logits.cols();
    let mut per_task_loss = Vec::with_capacity(tasks);
    let mut per_task_coded_count = Vec::with_capacity(tasks);
    let mut total = 0.0;
    for t in 0..tasks {
        let z = logits.column(t);
        let y = labels.column(t);
        let pw = pos_weight.map_or(1.0, |p| p[t]);
        let (loss, coded) = masked_task_loss_weighted(&z, &y, pw).map_err(|e| match e {
            Error::Numerical { detail, .. } => {
                Error::numerical(format!("loss of task {t}"), detail)
            }
            other => other,
        })?;
        total += weights.as_slice()[t] * loss;
        per_task_loss.push(loss);
        per_task_coded_count.push(coded);
    }
    Ok(TaskLossReport {
        per_task_loss,
        per_task_coded_count,
        total,
    })
}

pub(crate) fn check_loss_shapes(
    logits: &Matrix,
    labels: &Matrix<LabelValue>,
    weights: &WeightVector,
    pos_weight: Option<&[f64]>,
) -> Result<()> {
    if logits.rows() != labels.rows() || logits.cols() != labels.cols() {
        return Err(Error::Dimension(format!(
            "logits are {}x{} but labels are {}x{}",
            logits.rows(),
            logits.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    if weights.len() != logits.cols() {
        return Err(Error::Dimension(format!(
            "{} loss weights for {} tasks",
            weights.len(),
            logits.cols()
        )));
    }
    if let Some(p) = pos_weight {
        if p.len() != logits.cols() {
            return Err(Error::Dimension(format!(
                "{} positive-class weights for {} tasks",
                p.len(),
                logits.cols()
            )));
        }
    }
    Ok(())
}
