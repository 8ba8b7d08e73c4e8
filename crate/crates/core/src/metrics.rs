//! Segmentation metrics: per-class intersection-over-union and their mean.

use crate::error::{CoreError, Result};

/// Per-class TP/FP/FN counts accumulated from point-wise predictions.
#[derive(Clone, Debug)]
pub struct ConfusionCounts {
    pub num_classes: usize,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
    pub gt_present: Vec<bool>,
    pub correct: usize,
    pub total: usize,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        ConfusionCounts {
            num_classes,
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            gt_present: vec![false; num_classes],
            correct: 0,
            total: 0,
        }
    }

    /// Counts built directly from TP/FP/FN vectors; every class counts as
    /// present in the ground truth.
    pub fn from_counts(tp: Vec<usize>, fp: Vec<usize>, fn_: Vec<usize>) -> Self {
        let c = tp.len();
        let correct = tp.iter().sum();
        let total = tp
            .iter()
            .zip(&fn_)
            .map(|(&t, &f)| t + f)
            .sum();
        ConfusionCounts {
            num_classes: c,
            tp,
            fp,
            fn_,
            gt_present: vec![true; c],
            correct,
            total,
        }
    }

    pub fn update(&mut self, predictions: &[usize], labels: &[usize]) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= self.num_classes || l >= self.num_classes {
                return Err(CoreError::IndexOutOfRange(format!(
                    "class {} of {}",
                    p.max(l),
                    self.num_classes
                )));
            }
            self.gt_present[l] = true;
            self.total += 1;
            if p == l {
                self.tp[l] += 1;
                self.correct += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[l] += 1;
            }
        }
        Ok(())
    }

    /// IoU_c = TP / (TP + FP + FN); classes with an empty union score 0.
    pub fn iou_per_class(&self) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let union = self.tp[c] + self.fp[c] + self.fn_[c];
                if union == 0 {
                    0.0
                } else {
                    self.tp[c] as f64 / union as f64
                }
            })
            .collect()
    }

    /// Mean IoU over classes present in the ground truth.
    pub fn miou(&self) -> f64 {
        let iou = self.iou_per_class();
        let mut sum = 0.0;
        let mut count = 0usize;
        for c in 0..self.num_classes {
            if self.gt_present[c] {
                sum += iou[c];
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}
