//! Accuracy, confusion matrices and per-class precision/recall/F1 with
//! macro averaging. Labels are 1-based class ids throughout, matching the
//! dataset convention.

use crate::error::{Error, Result};

/// Fraction of exact matches between two equally long label sequences.
pub fn accuracy(predictions: &[u8], truths: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid_input("accuracy of an empty sample set"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::invalid_input(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Row = true class, column = predicted class, both 0-indexed internally
/// while the public label space stays 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        predictions: &[u8],
        truths: &[u8],
        num_classes: usize,
    ) -> Result<ConfusionMatrix> {
        if num_classes == 0 {
            return Err(Error::invalid_input("need at least one class"));
        }
        if predictions.len() != truths.len() {
            return Err(Error::invalid_input(format!(
                "{} predictions vs {} truths",
                predictions.len(),
                truths.len()
            )));
        }
        let mut counts = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &t) in predictions.iter().zip(truths) {
            for (label, role) in [(p, "predicted"), (t, "true")] {
                if label < 1 || label as usize > num_classes {
                    return Err(Error::invalid_input(format!(
                        "{role} label {label} outside 1..={num_classes}"
                    )));
                }
            }
            counts[(t - 1) as usize][(p - 1) as usize] += 1;
        }
        Ok(ConfusionMatrix {
            counts,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, true_class: usize, predicted_class: usize) -> usize {
        self.counts[true_class][predicted_class]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, true_class: usize) -> usize {
        self.counts[true_class].iter().sum()
    }

    pub fn col_sum(&self, predicted_class: usize) -> usize {
        self.counts.iter().map(|row| row[predicted_class]).sum()
    }

    /// Accuracy read off the diagonal; equals [`accuracy`] on the same
    /// prediction set.
    pub fn trace_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid_input("empty confusion matrix"));
        }
        let diag: usize = (0..self.num_classes).map(|c| self.counts[c][c]).sum();
        Ok(diag as f64 / total as f64)
    }

    /// Row-major CSV with a header row and one label column.
    pub fn to_csv(&self, labels: &[&str]) -> Result<String> {
        if labels.len() != self.num_classes {
            return Err(Error::invalid_input(format!(
                "{} labels for {} classes",
                labels.len(),
                self.num_classes
            )));
        }
        let mut out = String::from("true\\predicted");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(labels[i]);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Precision, recall and F1 for one class. A flag marks values that were
/// defined as 0 because their denominator vanished.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrfReport {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// True if any per-class score fell back to 0 on a 0/0.
    pub any_zero_division: bool,
}

/// Builds the confusion matrix and the per-class / macro scores in one
/// pass over the predictions.
pub fn confusion_and_prf(
    predictions: &[u8],
    truths: &[u8],
    num_classes: usize,
) -> Result<(ConfusionMatrix, PrfReport)> {
    let matrix = ConfusionMatrix::from_predictions(predictions, truths, num_classes)?;
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = matrix.count(c, c);
        let fp = matrix.col_sum(c) - tp;
        let fn_ = matrix.row_sum(c) - tp;
        let mut zero_division = false;
        let precision = if tp + fp == 0 {
            zero_division = true;
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            zero_division = true;
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            zero_division = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassScores {
            precision,
            recall,
            f1,
            zero_division,
        });
    }
    let n = num_classes as f64;
    let report = PrfReport {
        macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
        any_zero_division: per_class.iter().any(|c| c.zero_division),
        per_class,
    };
    Ok((matrix, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn accuracy_basics() {
        let same = vec![1u8; 10];
        assert_eq!(accuracy(&same, &same).unwrap(), 1.0);
        let acc = accuracy(&[1, 1, 2], &[1, 2, 2]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn accuracy_matches_count_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let pred: Vec<u8> = (0..200).map(|_| rng.gen_range(1..=6)).collect();
        let truth: Vec<u8> = (0..200).map(|_| rng.gen_range(1..=6)).collect();
        let mut hits = 0usize;
        for i in 0..200 {
            if pred[i] == truth[i] {
                hits += 1;
            }
        }
        assert_eq!(accuracy(&pred, &truth).unwrap(), hits as f64 / 200.0);
    }

    #[test]
    fn perfect_predictions_give_identity_pattern() {
        let labels: Vec<u8> = (0..30).map(|i| (i % 6 + 1) as u8).collect();
        let (matrix, report) = confusion_and_prf(&labels, &labels, 6).unwrap();
        for t in 0..6 {
            for p in 0..6 {
                let expect = if t == p { 5 } else { 0 };
                assert_eq!(matrix.count(t, p), expect);
            }
        }
        for c in &report.per_class {
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
            assert!(!c.zero_division);
        }
        assert_eq!(report.macro_f1, 1.0);
        assert!(!report.any_zero_division);
    }

    #[test]
    fn never_predicted_class_scores_zero_with_flag() {
        // Class 3 exists in truth but is never predicted.
        let truth = [1, 2, 3, 3, 1, 2];
        let pred = [1, 2, 1, 2, 1, 2];
        let (matrix, report) = confusion_and_prf(&pred, &truth, 3).unwrap();
        assert_eq!(matrix.total(), 6);
        let c3 = &report.per_class[2];
        assert_eq!(c3.precision, 0.0);
        assert_eq!(c3.recall, 0.0);
        assert_eq!(c3.f1, 0.0);
        assert!(c3.zero_division);
        assert!(report.any_zero_division);
        assert!(report.macro_f1.is_finite());
    }

    #[test]
    fn hand_computed_three_class_case() {
        // Confusion counts:            predicted
        //                          1    2    3
        //                 true 1 [ 4    1    0 ]
        //                      2 [ 2    3    1 ]
        //                      3 [ 0    1    5 ]
        let truth = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3];
        let pred = [1, 1, 1, 1, 2, 1, 1, 2, 2, 2, 3, 2, 3, 3, 3, 3, 3];
        let (matrix, report) = confusion_and_prf(&pred, &truth, 3).unwrap();
        assert_eq!(matrix.count(0, 0), 4);
        assert_eq!(matrix.count(1, 0), 2);
        assert_eq!(matrix.count(2, 1), 1);

        // Class 1: P = 4/6, R = 4/5. Class 2: P = 3/5, R = 3/6.
        // Class 3: P = 5/6, R = 5/6.
        let p = [4.0 / 6.0, 3.0 / 5.0, 5.0 / 6.0];
        let r = [4.0 / 5.0, 3.0 / 6.0, 5.0 / 6.0];
        for c in 0..3 {
            assert!((report.per_class[c].precision - p[c]).abs() < 1e-15);
            assert!((report.per_class[c].recall - r[c]).abs() < 1e-15);
            let f1 = 2.0 * p[c] * r[c] / (p[c] + r[c]);
            assert!((report.per_class[c].f1 - f1).abs() < 1e-15);
        }
        let macro_f1: f64 = (0..3)
            .map(|c| 2.0 * p[c] * r[c] / (p[c] + r[c]))
            .sum::<f64>()
            / 3.0;
        assert!((report.macro_f1 - macro_f1).abs() < 1e-15);

        // Matrix-derived accuracy equals direct accuracy.
        assert_eq!(
            matrix.trace_accuracy().unwrap(),
            accuracy(&pred, &truth).unwrap()
        );

        // Macro F1 sits between the per-class extremes.
        let f1s: Vec<f64> = report.per_class.iter().map(|c| c.f1).collect();
        let max = f1s.iter().cloned().fold(f64::MIN, f64::max);
        let min = f1s.iter().cloned().fold(f64::MAX, f64::min);
        assert!(report.macro_f1 <= max && report.macro_f1 >= min);
    }

    #[test]
    fn out_of_range_labels_rejected() {
        assert!(confusion_and_prf(&[0], &[1], 3).is_err());
        assert!(confusion_and_prf(&[1], &[4], 3).is_err());
    }

    #[test]
    fn csv_round_shape() {
        let (matrix, _) = confusion_and_prf(&[1, 2, 2], &[1, 1, 2], 2).unwrap();
        let csv = matrix.to_csv(&["A", "B"]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "A,1,1");
        assert_eq!(lines[2], "B,0,1");
        assert!(matrix.to_csv(&["only-one"]).is_err());
    }

    #[test]
    fn row_sums_track_true_counts() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let truth: Vec<u8> = (0..120).map(|_| rng.gen_range(1..=4)).collect();
        let pred: Vec<u8> = (0..120).map(|_| rng.gen_range(1..=4)).collect();
        let (matrix, _) = confusion_and_prf(&pred, &truth, 4).unwrap();
        assert_eq!(matrix.total(), 120);
        for c in 0..4 {
            let want = truth.iter().filter(|&&t| t == (c + 1) as u8).count();
            assert_eq!(matrix.row_sum(c), want);
        }
    }
}
