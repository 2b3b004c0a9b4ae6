#![allow(dead_code)]

use mtlw::data::{SplitSpec, SynthConfig};
use mtlw::harness::{DataSource, ExperimentConfig};
use mtlw::loss::LabelValue;
use mtlw::model::{Matrix, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small, quick experiment: 400 samples, 8 features, a few epochs.
pub fn tiny(preset: &str, epochs: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_preset(preset).unwrap();
    cfg.data.source = DataSource::Synth(SynthConfig {
        n_total: 400,
        cohort_b_fraction: 0.25,
        feature_dim: 8,
        ..SynthConfig::default()
    });
    cfg.data.split = SplitSpec {
        train: 240,
        val: 80,
        test: 80,
        seed: 0,
    };
    cfg.model.encoder_layers = vec![8];
    cfg.model.head_layers = vec![4, 1];
    cfg.training.max_epochs = epochs;
    cfg.training.batch_size = 8;
    cfg.training.learning_rate = 1e-3;
    cfg.normalize();
    cfg
}

pub fn random_labels(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    p_missing: f64,
) -> Matrix<LabelValue> {
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random_bool(p_missing) {
                LabelValue::NotCoded
            } else {
                LabelValue::from_bool(rng.random_bool(0.5))
            }
        })
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mutable access to the `k`-th scalar in [`Params::flatten`] order.
pub fn param_mut(params: &mut Params, mut k: usize) -> &mut f64 {
    for t in params.tensors_mut() {
        if k < t.len() {
            return &mut t[k];
        }
        k -= t.len();
    }
    panic!("parameter index out of range");
}
