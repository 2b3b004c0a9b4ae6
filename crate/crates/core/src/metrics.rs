//! ROC/AUC with not-coded exclusion and McNemar's paired test.
//!
//! AUC is the Mann-Whitney statistic: the fraction of (positive, negative)
//! pairs ranked correctly, with tied pairs counted as one half. It equals
//! the trapezoidal area under [`roc_curve`].

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::loss::{sigmoid, LabelValue};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// First predictor correct, second wrong.
    pub b: u64,
    /// First predictor wrong, second correct.
    pub c: u64,
    pub chi2: f64,
    pub p_value: f64,
}

/// Coded `(score, is_positive)` pairs plus positive and negative counts.
type CodedPairs = (Vec<(f64, bool)>, u64, u64);

fn coded_pairs(scores: &[f64], labels: &[LabelValue]) -> Result<CodedPairs> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut pairs = Vec::with_capacity(scores.len());
    let (mut pos, mut neg) = (0u64, 0u64);
    for (&s, &l) in scores.iter().zip(labels) {
        let Some(y) = l.as_bool() else { continue };
        if s.is_nan() {
            return Err(Error::numerical("scores", "NaN score"));
        }
        if y {
            pos += 1;
        } else {
            neg += 1;
        }
        pairs.push((s, y));
    }
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, found {pos} positive and {neg} negative coded labels"
        )));
    }
    Ok((pairs, pos, neg))
}

/// Scores sorted descending, grouped into runs of equal score.
fn tie_groups(mut pairs: Vec<(f64, bool)>) -> Vec<(f64, u64, u64)> {
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for (s, y) in pairs {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if y {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, y as u64, !y as u64)),
        }
    }
    groups
}

/// Mann-Whitney AUC over coded entries.
pub fn auc(scores: &[f64], labels: &[LabelValue]) -> Result<f64> {
    let (pairs, pos, neg) = coded_pairs(scores, labels)?;
    // Walking from the highest score down, every positive in a group beats
    // the negatives still below it and ties with the negatives in its group.
    let mut neg_remaining = neg;
    let mut twice_wins: u128 = 0;
    for (_, p, n) in tie_groups(pairs) {
        neg_remaining -= n;
        twice_wins += p as u128 * (2 * neg_remaining + n) as u128;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// ROC curve with one point per distinct score, starting at `(0, 0)` with
/// threshold `+inf` and ending at `(1, 1)`. A sample is called positive when
/// its score is `>= threshold`.
pub fn roc_curve(scores: &[f64], labels: &[LabelValue]) -> Result<Vec<RocPoint>> {
    let (pairs, pos, neg) = coded_pairs(scores, labels)?;
    let groups = tie_groups(pairs);
    let mut points = Vec::with_capacity(groups.len() + 1);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
    });
    let (mut tp, mut fp) = (0u64, 0u64);
    for (s, p, n) in groups {
        tp += p;
        fp += n;
        points.push(RocPoint {
            threshold: s,
            false_positive_rate: fp as f64 / neg as f64,
            true_positive_rate: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a sequence of ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            (w[1].false_positive_rate - w[0].false_positive_rate)
                * (w[1].true_positive_rate + w[0].true_positive_rate)
                / 2.0
        })
        .sum()
}

/// Writes `threshold,fpr,tpr` rows.
pub fn write_roc_csv<W: Write>(points: &[RocPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Validation(format!("writing ROC csv: {e}"));
    w.write_record(["threshold", "fpr", "tpr"]).map_err(io)?;
    for p in points {
        w.write_record([
            p.threshold.to_string(),
            p.false_positive_rate.to_string(),
            p.true_positive_rate.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Validation(format!("writing ROC csv: {e}")))?;
    Ok(())
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_survival_1df(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!(
            "chi-square statistic must be >= 0, got {x}"
        )));
    }
    Ok(erfc((x / 2.0).sqrt()).clamp(0.0, 1.0))
}

/// Continuity-corrected McNemar test on correctness against `truth`.
pub fn mcnemar(pred_a: &[bool], pred_b: &[bool], truth: &[bool]) -> Result<McNemarResult> {
    mcnemar_with(pred_a, pred_b, truth, true)
}

pub fn mcnemar_with(
    pred_a: &[bool],
    pred_b: &[bool],
    truth: &[bool],
    continuity_correction: bool,
) -> Result<McNemarResult> {
    if pred_a.len() != truth.len() || pred_b.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "McNemar inputs have lengths {}, {}, {}",
            pred_a.len(),
            pred_b.len(),
            truth.len()
        )));
    }
    let (mut b, mut c) = (0u64, 0u64);
    for ((&a, &p), &y) in pred_a.iter().zip(pred_b).zip(truth) {
        match (a == y, p == y) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(b, c, continuity_correction))
}

/// McNemar statistic from the two discordant counts.
pub fn mcnemar_from_counts(b: u64, c: u64, continuity_correction: bool) -> McNemarResult {
    let chi2 = if b + c == 0 {
        0.0
    } else {
        let diff = (b as f64 - c as f64).abs();
        let diff = if continuity_correction {
            (diff - 1.0).max(0.0)
        } else {
            diff
        };
        diff * diff / (b + c) as f64
    };
    let p_value = chi2_survival_1df(chi2).expect("chi2 is non-negative");
    McNemarResult {
        b,
        c,
        chi2,
        p_value,
    }
}

/// Hard predictions: `sigmoid(logit) >= threshold`.
pub fn binarize(logits: &[f64], threshold: f64) -> Vec<bool> {
    logits.iter().map(|&z| sigmoid(z) >= threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use LabelValue::{Negative as N, NotCoded as X, Positive as P};

    #[test]
    fn auc_small_example() {
        let got = auc(&[0.9, 0.6, 0.4, 0.2], &[P, N, P, N]).unwrap();
        assert_eq!(got, 0.75);
    }

    #[test]
    fn auc_perfect_and_tied() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[N, N, P, P]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[P, N]).unwrap(), 0.5);
    }

    #[test]
    fn auc_needs_both_classes() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[P, P]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            auc(&[0.1, 0.2, 0.3], &[N, X, X]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn not_coded_entries_are_ignored() {
        let a = auc(&[0.9, 0.6, 0.4, 0.2], &[P, N, P, N]).unwrap();
        let b = auc(&[0.9, 0.1, 0.6, 0.99, 0.4, 0.2], &[P, X, N, X, P, N]).unwrap();
        assert_eq!(a, b);
        let roc = roc_curve(&[0.5, 0.7, 0.1], &[X, P, N]).unwrap();
        assert_eq!(roc.len(), 3);
    }

    #[test]
    fn roc_two_sample_curve() {
        let roc = roc_curve(&[0.8, 0.3], &[P, N]).unwrap();
        let pts: Vec<(f64, f64)> = roc
            .iter()
            .map(|p| (p.false_positive_rate, p.true_positive_rate))
            .collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(trapezoid_area(&roc), 1.0);
    }

    #[test]
    fn chi2_survival_reference_points() {
        assert_eq!(chi2_survival_1df(0.0).unwrap(), 1.0);
        assert!((chi2_survival_1df(3.841).unwrap() - 0.05).abs() < 5e-4);
        assert!((chi2_survival_1df(6.635).unwrap() - 0.01).abs() < 5e-4);
        assert!(matches!(chi2_survival_1df(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn mcnemar_counts_example() {
        let r = mcnemar_from_counts(10, 2, true);
        assert!((r.chi2 - 49.0 / 12.0).abs() < 1e-12);
        assert!((r.p_value - 0.0433).abs() < 1e-3, "{}", r.p_value);
    }

    #[test]
    fn mcnemar_identical_predictors() {
        let preds = [true, false, true, true];
        let truth = [true, true, false, true];
        let r = mcnemar(&preds, &preds, &truth).unwrap();
        assert_eq!((r.b, r.c, r.chi2, r.p_value), (0, 0, 0.0, 1.0));
    }

    #[test]
    fn mcnemar_is_symmetric() {
        let a = [true, true, false, true, false, true, true];
        let b = [false, true, true, false, false, false, true];
        let y = [true, true, true, true, false, false, true];
        let ab = mcnemar(&a, &b, &y).unwrap();
        let ba = mcnemar(&b, &a, &y).unwrap();
        assert_eq!((ab.b, ab.c), (ba.c, ba.b));
        assert_eq!((ab.chi2, ab.p_value), (ba.chi2, ba.p_value));
    }

    #[test]
    fn mcnemar_length_mismatch() {
        assert!(matches!(
            mcnemar(&[true], &[true, false], &[true]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn binarize_threshold() {
        assert_eq!(binarize(&[-1.0, 0.0, 2.0], 0.5), vec![false, true, true]);
    }
}
