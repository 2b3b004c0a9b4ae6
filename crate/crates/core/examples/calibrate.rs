//! Sweeps generator settings and prints preset AUCs over several seeds.
//!
//! `cargo run --release --example calibrate -- <presets> <seeds> key=value...`
//! where keys are `shared`, `task`, `gamma`, `dim`, `epochs`, `lr`, `enc`
//! (comma-separated widths) and `head`.

use rayon::prelude::*;

use mtlw::harness::{prepare_data, run_experiment_on, DataSource, ExperimentConfig, SplitName};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let presets: Vec<&str> = args[0].split(',').collect();
    let seeds: Vec<u64> = args[1].split(',').map(|s| s.parse().unwrap()).collect();
    let mut base = ExperimentConfig::from_preset("mtl3").unwrap();
    for kv in &args[2..] {
        let (k, v) = kv.split_once('=').unwrap();
        let DataSource::Synth(s) = &mut base.data.source else {
            unreachable!()
        };
        let widths = || {
            v.split(',')
                .map(|w| w.parse().unwrap())
                .collect::<Vec<usize>>()
        };
        match k {
            "shared" => s.shared_signal = v.parse().unwrap(),
            "task" => s.task_signal = v.parse().unwrap(),
            "gamma" => s.interference = v.parse().unwrap(),
            "noise" => s.label_noise = v.parse().unwrap(),
            "dim" => s.feature_dim = v.parse().unwrap(),
            "epochs" => base.training.max_epochs = v.parse().unwrap(),
            "lr" => base.training.learning_rate = v.parse().unwrap(),
            "enc" => base.model.encoder_layers = widths(),
            "head" => base.model.head_layers = widths(),
            _ => panic!("unknown key {k}"),
        }
    }
    let jobs: Vec<(u64, &str)> = seeds
        .iter()
        .flat_map(|&s| presets.iter().map(move |&p| (s, p)))
        .collect();
    let out: Vec<(u64, String, f64, f64, u64)> = jobs
        .par_iter()
        .map(|&(seed, preset)| {
            let mut cfg = ExperimentConfig::from_preset(preset).unwrap();
            cfg.data = base.data.clone();
            cfg.model = base.model.clone();
            cfg.training = base.training.clone();
            cfg.override_seed(seed);
            cfg.normalize();
            let splits = prepare_data(&cfg).unwrap();
            let r = run_experiment_on(&cfg, &splits).unwrap();
            (
                seed,
                preset.to_string(),
                r.selected_auc(SplitName::Val, 0).unwrap_or(f64::NAN),
                r.selected_auc(SplitName::Test, 0).unwrap_or(f64::NAN),
                r.selected_epoch.unwrap_or(0),
            )
        })
        .collect();
    for seed in &seeds {
        let row: Vec<String> = out
            .iter()
            .filter(|o| o.0 == *seed)
            .map(|o| format!("{}: val {:.4} test {:.4} @{}", o.1, o.2, o.3, o.4))
            .collect();
        println!("seed {seed}: {}", row.join(" | "));
    }
}
