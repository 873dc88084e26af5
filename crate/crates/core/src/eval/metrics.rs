//! Confusion matrices and the precision/recall/F-score family.
//!
//! Counts are exact integers; scores are derived on demand so merged or
//! pooled matrices need no recomputation pass. A class that is never
//! predicted (or never occurs) scores zero rather than poisoning the macro
//! average with a NaN.

use crate::error::{Error, Result};

/// Square matrix of prediction counts, `count(true_class, predicted)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    m: usize,
    /// Row-major `[true][predicted]`.
    counts: Vec<u64>,
}

/// Per-class precision, recall, and F-score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            m: classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.m
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) -> Result<()> {
        if true_class >= self.m || predicted >= self.m {
            return Err(Error::LabelOutOfRange {
                label: true_class.max(predicted),
                classes: self.m,
            });
        }
        self.counts[true_class * self.m + predicted] += 1;
        Ok(())
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.m + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another matrix's counts into this one; this is how per-fold
    /// results pool into one matrix.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.m != other.m {
            return Err(Error::ShapeMismatch {
                context: "confusion matrices must have equal class counts to merge",
                left: vec![self.m],
                right: vec![other.m],
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = (0..self.m).map(|k| self.count(k, k)).sum();
        hits as f64 / total as f64
    }

    /// Precision, recall, and F-score of class `k`. Empty denominators give
    /// zero: no predictions means zero precision, no occurrences zero
    /// recall, and both zero means a zero F-score.
    pub fn class_scores(&self, k: usize) -> ClassScores {
        let tp = self.count(k, k);
        let predicted: u64 = (0..self.m).map(|t| self.count(t, k)).sum();
        let actual: u64 = (0..self.m).map(|p| self.count(k, p)).sum();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if actual == 0 {
            0.0
        } else {
            tp as f64 / actual as f64
        };
        let f_score = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores {
            precision,
            recall,
            f_score,
        }
    }

    /// Unweighted mean of the per-class F-scores.
    pub fn macro_f(&self) -> f64 {
        let sum: f64 = (0..self.m).map(|k| self.class_scores(k).f_score).sum();
        sum / self.m as f64
    }

    /// Each row divided by its sum (rows of zeros stay zero), row-major.
    pub fn row_normalized(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.m];
        for t in 0..self.m {
            let row_sum: u64 = (0..self.m).map(|p| self.count(t, p)).sum();
            if row_sum == 0 {
                continue;
            }
            for p in 0..self.m {
                out[t * self.m + p] = self.count(t, p) as f64 / row_sum as f64;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn worked_example() -> ConfusionMatrix {
        // 3 classes; rows are true classes:
        //        pred0 pred1 pred2
        // true0    5     1     0
        // true1    2     7     1
        // true2    0     0     4
        let mut cm = ConfusionMatrix::new(3);
        for (t, p, n) in [(0, 0, 5), (0, 1, 1), (1, 0, 2), (1, 1, 7), (1, 2, 1), (2, 2, 4)] {
            for _ in 0..n {
                cm.record(t, p).unwrap();
            }
        }
        cm
    }

    #[test]
    fn scores_match_hand_computation() {
        let cm = worked_example();
        assert_eq!(cm.total(), 20);
        assert!((cm.accuracy() - 16.0 / 20.0).abs() < 1e-15);

        let s0 = cm.class_scores(0);
        assert!((s0.precision - 5.0 / 7.0).abs() < 1e-15);
        assert!((s0.recall - 5.0 / 6.0).abs() < 1e-15);
        let f0 = 2.0 * (5.0 / 7.0) * (5.0 / 6.0) / (5.0 / 7.0 + 5.0 / 6.0);
        assert!((s0.f_score - f0).abs() < 1e-15);

        let s2 = cm.class_scores(2);
        assert!((s2.precision - 4.0 / 5.0).abs() < 1e-15);
        assert!((s2.recall - 1.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_scores_zero_not_nan() {
        let mut cm = ConfusionMatrix::new(3);
        cm.record(0, 0).unwrap();
        cm.record(1, 0).unwrap();
        // class 2 never occurs and is never predicted
        let s = cm.class_scores(2);
        assert_eq!((s.precision, s.recall, s.f_score), (0.0, 0.0, 0.0));
        assert!(cm.macro_f().is_finite());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(
            cm.record(2, 0),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(cm.record(0, 5).is_err());
    }

    #[test]
    fn merge_adds_counts_and_rejects_size_mismatch() {
        let mut a = worked_example();
        let b = worked_example();
        a.merge(&b).unwrap();
        assert_eq!(a.total(), 40);
        assert_eq!(a.count(1, 1), 14);
        // scores computed from counts, so the pooled matrix needs no extra state
        assert!((a.accuracy() - 16.0 / 20.0).abs() < 1e-15);

        let mut small = ConfusionMatrix::new(2);
        assert!(small.merge(&b).is_err());
    }

    #[test]
    fn row_normalized_rows_sum_to_one_or_zero() {
        let cm = worked_example();
        let rows = cm.row_normalized();
        for t in 0..3 {
            let sum: f64 = rows[t * 3..(t + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let empty = ConfusionMatrix::new(2);
        assert!(empty.row_normalized().iter().all(|&v| v == 0.0));
    }

    /// Brute-force oracle: recount everything from the raw label pairs.
    fn oracle_scores(truth: &[usize], pred: &[usize], m: usize, k: usize) -> ClassScores {
        let tp = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **t == k && **p == k)
            .count() as u64;
        let predicted = pred.iter().filter(|p| **p == k).count() as u64;
        let actual = truth.iter().filter(|t| **t == k).count() as u64;
        assert!(m > k);
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        let f_score = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores { precision, recall, f_score }
    }

    proptest! {
        /// Random label vectors against the brute-force oracle, bit-exact.
        #[test]
        fn scores_match_brute_force_oracle(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..200),
        ) {
            let truth: Vec<usize> = pairs.iter().map(|(t, _)| *t).collect();
            let pred: Vec<usize> = pairs.iter().map(|(_, p)| *p).collect();
            let mut cm = ConfusionMatrix::new(5);
            for (&t, &p) in truth.iter().zip(&pred) {
                cm.record(t, p).unwrap();
            }
            for k in 0..5 {
                let got = cm.class_scores(k);
                let want = oracle_scores(&truth, &pred, 5, k);
                prop_assert_eq!(got, want);
            }
        }
    }
}
