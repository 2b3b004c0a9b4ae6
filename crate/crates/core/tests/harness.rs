mod common;

use std::fs;

use common::tiny;
use mtlw::data::SynthConfig;
use mtlw::harness::{
    emit_outputs, prepare_data, run_experiment_on, run_grid, run_grid_on, DataSource, Manifest,
    SplitName,
};
use mtlw::metrics::{roc_curve, trapezoid_area};
use mtlw::model::Model;
use mtlw::scheduler::{ItwConfig, PflpConfig};
use mtlw::{Error, PRIMARY_TASK};

#[test]
fn stl_leaves_auxiliary_heads_untouched() {
    let cfg = tiny("stl", 3);
    let splits = prepare_data(&cfg).unwrap();
    let r = run_experiment_on(&cfg, &splits).unwrap();
    let mut model_cfg = cfg.model.clone();
    model_cfg.input_dim = splits.train.feature_dim();
    let init = Model::init(model_cfg).unwrap();
    for t in 1..5 {
        assert_eq!(r.model.params.heads[t], init.params.heads[t], "head {t}");
    }
    assert_ne!(r.model.params.heads[0], init.params.heads[0]);
    assert!(r
        .schedule_trace
        .iter()
        .all(|row| row.weights[1..].iter().all(|&w| w == 0.0)));
}

#[test]
fn stl_ignores_schedule_settings() {
    let a = tiny("stl", 3);
    let mut b = a.clone();
    b.pflp = PflpConfig {
        window_iterations: 3,
        damping_factor: 0.5,
        ..PflpConfig::default()
    };
    b.itw = ItwConfig::at_epoch(1);
    let splits = prepare_data(&a).unwrap();
    let ra = run_experiment_on(&a, &splits).unwrap();
    let rb = run_experiment_on(&b, &splits).unwrap();
    assert_eq!(ra.per_epoch, rb.per_epoch);
    assert_eq!(ra.model.params, rb.model.params);
}

fn small_grid() -> Vec<mtlw::harness::ExperimentConfig> {
    ["stl", "mtl", "mtl3", "itw2"]
        .iter()
        .map(|p| tiny(p, 4))
        .collect()
}

#[test]
fn concurrent_grid_equals_sequential() {
    let grid = small_grid();
    let seq = run_grid(&grid, 1).unwrap();
    let par = run_grid(&grid, 3).unwrap();
    assert_eq!(seq.summary, par.summary);
}

#[test]
fn emitted_files_are_reproducible_and_consistent() {
    let grid = small_grid();
    let splits = prepare_data(&grid[0]).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut written = Vec::new();
    for dir in &dirs {
        let out = run_grid_on(&grid, &splits, 2).unwrap();
        written.push(emit_outputs(&out.results, &out.summary, &splits, dir.path()).unwrap());
    }
    assert_eq!(written[0].len(), written[1].len());
    for (a, b) in written[0].iter().zip(&written[1]) {
        assert_eq!(
            fs::read(a).unwrap(),
            fs::read(b).unwrap(),
            "{}",
            a.display()
        );
        let text = fs::read_to_string(a).unwrap();
        assert!(!text.is_empty());
    }

    // Replaying the manifest reproduces the summary.
    let manifest =
        Manifest::from_json(&fs::read_to_string(dirs[0].path().join("manifest.json")).unwrap())
            .unwrap();
    let replay = run_grid(&manifest.experiments, 1).unwrap();
    let original = run_grid_on(&grid, &splits, 1).unwrap();
    assert_eq!(replay.summary, original.summary);

    // ROC files integrate to the reported test AUC.
    for row in &original.summary.rows {
        let path = dirs[0].path().join(format!("roc_{}_test.csv", row.name));
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let pts: Vec<(f64, f64)> = rdr
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[1].parse().unwrap(), r[2].parse().unwrap())
            })
            .collect();
        let area: f64 = pts
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum();
        assert!((area - row.test_auc.unwrap()).abs() <= 1e-9, "{}", row.name);
    }
}

#[test]
fn roc_curve_area_equals_selected_auc() {
    let cfg = tiny("mtl3", 3);
    let splits = prepare_data(&cfg).unwrap();
    let r = run_experiment_on(&cfg, &splits).unwrap();
    let snap = r.snapshot.as_ref().unwrap();
    let roc = roc_curve(
        &snap.test_logits.column(PRIMARY_TASK),
        &splits.test.task_labels(PRIMARY_TASK),
    )
    .unwrap();
    assert!((trapezoid_area(&roc) - r.test_auc_primary().unwrap()).abs() <= 1e-12);
}

#[test]
fn selected_epoch_has_best_validation_auc() {
    let cfg = tiny("itw2", 6);
    let splits = prepare_data(&cfg).unwrap();
    let r = run_experiment_on(&cfg, &splits).unwrap();
    let best = r.selected_auc(SplitName::Val, PRIMARY_TASK).unwrap();
    for m in r
        .per_epoch
        .iter()
        .filter(|m| m.split == SplitName::Val && m.task == PRIMARY_TASK)
    {
        assert!(m.auc.unwrap() <= best);
        if m.auc.unwrap() == best {
            assert!(m.epoch >= r.selected_epoch.unwrap());
        }
    }
}

#[test]
fn divergent_run_is_recorded_not_raised() {
    let mut bad = tiny("mtl", 3);
    bad.name = "diverge".into();
    bad.training.learning_rate = 1e306;
    let grid = vec![tiny("stl", 2), bad];
    let out = run_grid(&grid, 1).unwrap();
    let row = out.summary.row("diverge").unwrap();
    assert!(
        row.failure.as_deref().unwrap().contains("non-finite"),
        "{:?}",
        row.failure
    );
    assert!(row.mcnemar.is_none());
    assert!(out.summary.row("stl").unwrap().failure.is_none());
}

#[test]
fn mismatched_data_is_a_config_error() {
    let mut other = tiny("mtl3", 1);
    if let DataSource::Synth(s) = &mut other.data.source {
        *s = SynthConfig {
            seed: 99,
            ..s.clone()
        };
    }
    let err = run_grid(&[tiny("stl", 1), other], 1).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn single_experiment_grid_has_no_p_value() {
    let out = run_grid(&[tiny("mtl3", 2)], 1).unwrap();
    assert_eq!(out.summary.rows.len(), 1);
    assert!(out.summary.rows[0].mcnemar.is_none());
}

#[test]
fn p_values_only_for_runs_beating_baseline() {
    let out = run_grid(&small_grid(), 1).unwrap();
    let base = out.summary.row("stl").unwrap().test_auc.unwrap();
    for row in &out.summary.rows {
        assert_eq!(
            row.mcnemar.is_some(),
            row.name != "stl" && row.test_auc.unwrap() > base,
            "{}",
            row.name
        );
    }
}
