//! Multi-task loss-weight scheduling on a shared-encoder network.
//!
//! The crate trains a small multilayer perceptron with one shared encoder
//! and one head per task. Per-iteration loss weights come from two
//! policies:
//!
//! * **periodic focusing**: every `window_iterations` batches a single task
//!   keeps its base weight while every other task is damped by a constant
//!   factor; the loop restarts on the primary task at every epoch;
//! * **internal-transfer weighting**: once the validation AUC of the
//!   primary task plateaus, auxiliary weights are pinned to a small
//!   constant for the rest of training.
//!
//! Labels may be missing (`-999`) for any task; missing entries are
//! excluded from both losses and metrics.
//!
//! Module map:
//!
//! * [`model`]: dense layers, exact backpropagation, Adam.
//! * [`loss`]: masked binary cross-entropy and the weighted total loss.
//! * [`scheduler`]: focusing windows and the internal-transfer lock.
//! * [`metrics`]: AUC, ROC curves, McNemar's test.
//! * [`data`]: synthetic cohorts, CSV I/O, seeded splits.
//! * [`harness`]: experiment presets, training runs, grids and output files.

pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod scheduler;

pub use error::{Error, Result};

/// Index of the primary task in every weight vector and label row.
pub const PRIMARY_TASK: usize = 0;
