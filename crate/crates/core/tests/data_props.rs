use mtlw::data::{
    load_csv, read_csv, split, synth_generate, Cohort, SplitSpec, SynthConfig, COPD_TASK,
    TASK_COUNT,
};
use mtlw::loss::LabelValue;
use mtlw::{Error, PRIMARY_TASK};

#[test]
fn prevalence_hits_targets_on_large_cohorts() {
    for seed in 0..4 {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let d = synth_generate(&cfg).unwrap();
        for t in 0..TASK_COUNT {
            let p = d.prevalence(t).unwrap();
            assert!(
                (p - cfg.prevalence_targets[t]).abs() <= 0.01,
                "seed {seed} task {t}: {p}"
            );
        }
    }
}

#[test]
fn cohort_b_codes_only_primary_and_copd() {
    let d = synth_generate(&SynthConfig::default()).unwrap();
    let b: Vec<_> = d
        .samples()
        .iter()
        .filter(|s| s.cohort == Cohort::B)
        .collect();
    assert_eq!(b.len(), 870);
    for s in &b {
        for t in 0..TASK_COUNT {
            let coded = t == PRIMARY_TASK || t == COPD_TASK;
            assert_eq!(s.labels[t].is_coded(), coded, "{} task {t}", s.id);
        }
    }
    assert!(d
        .samples()
        .iter()
        .filter(|s| s.cohort == Cohort::A)
        .all(|s| s.labels.iter().all(|l| l.is_coded())));
}

#[test]
fn label_seed_leaves_features_alone() {
    let a = synth_generate(&SynthConfig {
        n_total: 500,
        label_seed: Some(1),
        ..SynthConfig::default()
    })
    .unwrap();
    let b = synth_generate(&SynthConfig {
        n_total: 500,
        label_seed: Some(2),
        ..SynthConfig::default()
    })
    .unwrap();
    let mut labels_differ = false;
    for (x, y) in a.samples().iter().zip(b.samples()) {
        assert_eq!(x.features, y.features);
        assert_eq!(x.cohort, y.cohort);
        labels_differ |= x.labels != y.labels;
    }
    assert!(labels_differ);
}

#[test]
fn interference_changes_labels_not_features() {
    let plain = synth_generate(&SynthConfig {
        n_total: 500,
        ..SynthConfig::default()
    })
    .unwrap();
    let mixed = synth_generate(&SynthConfig {
        n_total: 500,
        interference: 2.0,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(
        plain.feature_matrix(&[0, 1, 2]),
        mixed.feature_matrix(&[0, 1, 2])
    );
    assert_eq!(
        plain.task_labels(PRIMARY_TASK),
        mixed.task_labels(PRIMARY_TASK)
    );
    assert_ne!(plain.task_labels(1), mixed.task_labels(1));
}

#[test]
fn csv_round_trip_is_exact() {
    let d = synth_generate(&SynthConfig {
        n_total: 300,
        feature_dim: 6,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    d.write_csv(&path).unwrap();
    assert_eq!(load_csv(&path).unwrap(), d);
}

#[test]
fn csv_rejects_bad_label_with_line() {
    let text = "id,f0,label_LC,label_AA,label_CB,label_COPD,label_E,cohort\n\
                a,0.5,1,0,0,0,0,A\n\
                b,0.1,2,0,0,0,0,A\n";
    match read_csv(text.as_bytes()) {
        Err(Error::Validation(m)) => assert!(m.contains("line 3"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
    let header_only = "id,f0,label_LC,label_AA,label_CB,label_COPD,label_E,cohort\n";
    assert!(matches!(
        read_csv(header_only.as_bytes()),
        Err(Error::EmptyDataset)
    ));
}

#[test]
fn splits_are_disjoint_and_seeded() {
    let d = synth_generate(&SynthConfig {
        n_total: 400,
        ..SynthConfig::default()
    })
    .unwrap();
    let sizes = SplitSpec {
        train: 300,
        val: 50,
        test: 50,
        seed: 4,
    };
    let s = split(&d, &sizes).unwrap();
    let mut ids: Vec<&str> = s.train.ids();
    ids.extend(s.val.ids());
    ids.extend(s.test.ids());
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 400);
    assert_eq!(split(&d, &sizes).unwrap(), s);
    assert_ne!(
        split(&d, &SplitSpec { seed: 5, ..sizes })
            .unwrap()
            .test
            .ids(),
        s.test.ids()
    );
    let missing = s
        .test
        .task_labels(1)
        .iter()
        .filter(|l| **l == LabelValue::NotCoded)
        .count();
    assert!(missing > 0);
}
