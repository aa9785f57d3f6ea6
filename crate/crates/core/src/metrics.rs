//! Binary classification metrics; the positive class is fake (label 1).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Confusion-matrix metrics with precision/recall/F1 defined as 0 when
/// their denominator is 0.
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "predictions ({}) and labels ({}) differ in length",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Validation("cannot score an empty set".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels.iter()) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            (0, 0) => tn += 1,
            _ => {
                return Err(Error::Validation(
                    "predictions and labels must be 0 or 1".into(),
                ))
            }
        }
    }
    let total = (tp + fp + fn_ + tn) as f64;
    let accuracy = (tp + tn) as f64 / total;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        tn,
    })
}

pub const METRICS_CSV_HEADER: &str = "variant,accuracy,precision,recall,f1";

/// One CSV row in the metrics-table format.
pub fn metrics_csv_row(variant: &str, m: &MetricsReport) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6}",
        variant, m.accuracy, m.precision, m.recall, m.f1
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        let m = compute_metrics(&[1, 1, 1], &[1, 1, 1]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn total_miss_scores_zero_by_convention() {
        let m = compute_metrics(&[0, 0, 0], &[1, 1, 1]).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn confusion_arithmetic_matches_hand_values() {
        // TP=2, FP=1, FN=1, TN=2.
        let preds = [1, 1, 1, 0, 0, 0];
        let labels = [1, 1, 0, 1, 0, 0];
        let m = compute_metrics(&preds, &labels).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 1, 2));
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_pairs_match_brute_force_counts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        let preds: Vec<u8> = (0..20).map(|_| rng.gen_range(0..=1)).collect();
        let labels: Vec<u8> = (0..20).map(|_| rng.gen_range(0..=1)).collect();
        let m = compute_metrics(&preds, &labels).unwrap();
        let tp = preds
            .iter()
            .zip(&labels)
            .filter(|&(&p, &y)| p == 1 && y == 1)
            .count();
        assert_eq!(m.tp, tp);
        assert_eq!(m.tp + m.fp + m.fn_ + m.tn, 20);
        if m.precision + m.recall > 0.0 {
            let harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            assert!((m.f1 - harmonic).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(compute_metrics(&[1], &[1, 0]).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
    }
}
