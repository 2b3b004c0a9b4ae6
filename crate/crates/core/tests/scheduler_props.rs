use mtlw::loss::WeightVector;
use mtlw::scheduler::{
    advance_epoch, advance_iteration, provisional_weights, ItwConfig, PflpConfig, Phase,
    ScheduleState, TraceRow,
};
use proptest::prelude::*;

fn base() -> WeightVector {
    WeightVector::new(vec![3.0, 1.0, 1.0, 1.0, 1.0]).unwrap()
}

/// Drives one epoch of `n` iterations and returns the trace.
fn epoch_trace(
    state: &mut ScheduleState,
    n: u64,
    pflp: &PflpConfig,
    itw: &ItwConfig,
) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for _ in 0..n {
        rows.push(TraceRow::capture(state, pflp, itw));
        *state = advance_iteration(state);
    }
    rows
}

/// Neumaier-compensated sum; plain summation of 100 terms drifts by ~1e-15.
fn exact_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + comp
}

#[test]
fn loop_average_is_damped_base() {
    let pflp = PflpConfig::default();
    let itw = ItwConfig::off();
    let mut s = ScheduleState::new(base(), &pflp);
    let rows = epoch_trace(&mut s, 100, &pflp, &itw);
    for t in 0..5 {
        let mean = exact_sum(rows.iter().map(|r| r.weights[t])) / 100.0;
        let want = [0.84, 0.28, 0.28, 0.28, 0.28][t];
        assert!((mean - want).abs() <= 1e-15, "task {t}: {mean} vs {want}");
    }
}

#[test]
fn weights_never_zero_for_positive_base() {
    let pflp = PflpConfig::default();
    let itw = ItwConfig::auto();
    let mut s = ScheduleState::new(base(), &pflp);
    for _ in 0..30 {
        for r in epoch_trace(&mut s, 57, &pflp, &itw) {
            assert!(r.weights.iter().all(|&w| w > 0.0));
        }
        s = advance_epoch(&s, Some(0.5), &itw).unwrap();
    }
    assert_eq!(s.phase, Phase::ItwLocked);
}

#[derive(Debug, Clone)]
enum Event {
    Iterations(u64),
    Epoch(Option<f64>),
}

fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        (1u64..300).prop_map(Event::Iterations),
        prop::option::of(0.0f64..=1.0).prop_map(Event::Epoch),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lock_is_absorbing(events in prop::collection::vec(event(), 50)) {
        let pflp = PflpConfig::default();
        let itw = ItwConfig::at_epoch(1);
        let mut s = ScheduleState::new(base(), &pflp);
        s = advance_epoch(&s, Some(0.6), &itw).unwrap();
        prop_assert_eq!(s.phase, Phase::ItwLocked);
        for e in events {
            match e {
                Event::Iterations(n) => for _ in 0..n {
                    let w = provisional_weights(&s, &pflp, &itw);
                    prop_assert_eq!(w.as_slice(), &[3.0, 0.1, 0.1, 0.1, 0.1][..]);
                    s = advance_iteration(&s);
                },
                Event::Epoch(auc) => s = advance_epoch(&s, auc, &itw).unwrap(),
            }
            prop_assert_eq!(s.phase, Phase::ItwLocked);
        }
    }

    #[test]
    fn replay_is_deterministic(lengths in prop::collection::vec(1u64..250, 1..6), aucs in prop::collection::vec(0.0f64..=1.0, 6)) {
        let pflp = PflpConfig::default();
        let itw = ItwConfig { patience_epochs: 2, ..ItwConfig::auto() };
        let run = || {
            let mut s = ScheduleState::new(base(), &pflp);
            let mut rows = Vec::new();
            for (n, auc) in lengths.iter().zip(&aucs) {
                rows.extend(epoch_trace(&mut s, *n, &pflp, &itw));
                s = advance_epoch(&s, Some(*auc), &itw).unwrap();
            }
            rows
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn focus_restarts_at_primary(carry in 0u64..1000) {
        let pflp = PflpConfig::default();
        let itw = ItwConfig::off();
        let mut s = ScheduleState::new(base(), &pflp);
        epoch_trace(&mut s, carry, &pflp, &itw);
        s = advance_epoch(&s, None, &itw).unwrap();
        prop_assert_eq!(s.focus_task(&pflp), Some(0));
    }
}
