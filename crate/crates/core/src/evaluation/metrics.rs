use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Confusion table with glaucoma as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, truth: Label) {
        match (predicted.is_positive(), truth.is_positive()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// Same table read with the other class as positive.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), |a, b| a + b)
    }
}

pub fn confusion_from_predictions(predicted: &[Label], truth: &[Label]) -> Result<ConfusionCounts> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        c.record(p, t);
    }
    Ok(c)
}

/// Metric suite; a metric whose denominator is zero is `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `F_beta = (1 + b^2) P R / (b^2 P + R)`.
fn f_beta(p: Option<f64>, r: Option<f64>, beta2: f64) -> Option<f64> {
    let (p, r) = (p?, r?);
    let den = beta2 * p + r;
    (den > 0.0).then(|| (1.0 + beta2) * p * r / den)
}

pub fn compute_metrics(c: &ConfusionCounts) -> MetricsReport {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    let precision = ratio(c.tp, c.tp + c.fp);
    MetricsReport {
        accuracy: ratio(c.tp + c.tn, c.total()),
        balanced_accuracy: sensitivity.zip(specificity).map(|(r, s)| (r + s) / 2.0),
        sensitivity,
        specificity,
        precision,
        f1: f_beta(precision, sensitivity, 1.0),
        f2: f_beta(precision, sensitivity, 4.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let m = compute_metrics(&ConfusionCounts {
            tp: 90,
            fn_: 10,
            tn: 95,
            fp: 5,
        });
        let close = |a: Option<f64>, b: f64| assert!((a.unwrap() - b).abs() < 1e-6, "{a:?} vs {b}");
        close(m.sensitivity, 0.9);
        close(m.specificity, 0.95);
        close(m.accuracy, 0.925);
        close(m.balanced_accuracy, 0.925);
        close(m.precision, 0.947368);
        close(m.f1, 0.923077);
        close(m.f2, 0.909091);
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = compute_metrics(&ConfusionCounts {
            tp: 3,
            fp: 0,
            tn: 4,
            fn_: 0,
        });
        for v in [m.accuracy, m.balanced_accuracy, m.sensitivity, m.specificity, m.precision, m.f1, m.f2] {
            assert_eq!(v, Some(1.0));
        }
        let none_pos = compute_metrics(&ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 5,
            fn_: 0,
        });
        assert_eq!(none_pos.sensitivity, None);
        assert_eq!(none_pos.precision, None);
        assert_eq!(none_pos.f1, None);
        assert_eq!(none_pos.balanced_accuracy, None);
        assert_eq!(none_pos.accuracy, Some(1.0));
        assert_eq!(compute_metrics(&ConfusionCounts::default()).accuracy, None);
    }

    #[test]
    fn equal_precision_recall() {
        let m = compute_metrics(&ConfusionCounts {
            tp: 6,
            fp: 2,
            tn: 9,
            fn_: 2,
        });
        assert!((m.f1.unwrap() - 0.75).abs() < 1e-15);
        assert!((m.f2.unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn four_sample_tally() {
        use Label::*;
        let pred = [Glaucoma, Healthy, Glaucoma, Healthy];
        let truth = [Glaucoma, Glaucoma, Healthy, Healthy];
        let c = confusion_from_predictions(&pred, &truth).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (1, 1, 1, 1));
        let flipped: Vec<Label> = pred.iter().map(|&p| if p == Glaucoma { Healthy } else { Glaucoma }).collect();
        let s = confusion_from_predictions(&flipped, &truth).unwrap();
        assert_eq!((s.tp, s.fn_, s.tn, s.fp), (c.fn_, c.tp, c.fp, c.tn));
        assert!(confusion_from_predictions(&pred[..3], &truth).is_err());
    }
}
