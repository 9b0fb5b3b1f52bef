use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Accuracy, macro recall, macro F1 and micro F1 with the per-class detail.
///
/// Macro averages run over classes that occur in the gold labels or the
/// predictions. A class that is only ever predicted scores zero, so
/// spurious predictions pull the averages down while perfect predictions
/// still score 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassScores>,
    /// `confusion[gold][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricsReport {
    pub fn compute(golds: &[usize], preds: &[usize], classes: usize) -> Result<Self> {
        if golds.len() != preds.len() {
            return Err(Error::Usage(format!("{} golds but {} predictions", golds.len(), preds.len())));
        }
        if golds.is_empty() {
            return Err(Error::Usage("cannot score an empty prediction set".into()));
        }
        if let Some(&bad) = golds.iter().chain(preds).find(|&&c| c >= classes) {
            return Err(Error::Validation(format!("label {bad} outside {classes} classes")));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&g, &p) in golds.iter().zip(preds) {
            confusion[g][p] += 1;
        }
        let mut per_class = Vec::with_capacity(classes);
        let (mut tp_sum, mut fp_sum, mut fn_sum) = (0, 0, 0);
        let (mut rec_sum, mut f1_sum, mut active) = (0.0, 0.0, 0usize);
        for c in 0..classes {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let (fp, fneg) = (predicted - tp, support - tp);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let score = f1(precision, recall);
            if support + predicted > 0 {
                active += 1;
                rec_sum += recall;
                f1_sum += score;
            }
            tp_sum += tp;
            fp_sum += fp;
            fn_sum += fneg;
            per_class.push(ClassScores {
                precision,
                recall,
                f1: score,
                support,
            });
        }
        let micro_p = ratio(tp_sum, tp_sum + fp_sum);
        let micro_r = ratio(tp_sum, tp_sum + fn_sum);
        Ok(MetricsReport {
            accuracy: ratio(tp_sum, golds.len()),
            macro_recall: rec_sum / active as f64,
            macro_f1: f1_sum / active as f64,
            micro_f1: f1(micro_p, micro_r),
            per_class,
            confusion,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let r = MetricsReport::compute(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.macro_recall - 0.8333).abs() < 1e-4);
        assert!((r.macro_f1 - 0.7778).abs() < 1e-4);
        assert!((r.micro_f1 - 0.75).abs() < 1e-12);
        assert_eq!(r.confusion[0], vec![1, 1, 0]);
    }

    #[test]
    fn perfect_and_degenerate() {
        let r = MetricsReport::compute(&[2, 0, 2], &[2, 0, 2], 5).unwrap();
        assert_eq!((r.accuracy, r.macro_recall, r.macro_f1, r.micro_f1), (1.0, 1.0, 1.0, 1.0));
        let r = MetricsReport::compute(&[1, 1], &[1, 1], 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class[1].f1, 1.0);
    }

    #[test]
    fn predicted_only_class_scores_zero() {
        let r = MetricsReport::compute(&[0, 0], &[0, 1], 2).unwrap();
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!((r.macro_recall - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(MetricsReport::compute(&[0, 3], &[0, 0], 3), Err(Error::Validation(_))));
        assert!(MetricsReport::compute(&[0], &[0, 1], 3).is_err());
    }
}
