use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    /// Fraction of this class's samples predicted correctly (its recall).
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Classification metrics. Macro figures average the per-class values
/// with equal weight; a class never predicted has precision 0, and F1 is 0
/// when precision and recall are both 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    /// `trace(confusion) / samples`
    pub accuracy: f64,
    pub macro_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Mean cross-entropy, when logits were available.
    pub mean_loss: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Per-epoch training loss, filled in by training.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidConfig("confusion matrix must be square and non-empty".into()));
        }
        let samples: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|r| r[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    class: c,
                    support,
                    accuracy: recall,
                    precision,
                    recall,
                    f1,
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
        Ok(Self {
            samples,
            accuracy: ratio(trace, samples),
            macro_accuracy: mean(|c| c.accuracy),
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            mean_loss: None,
            per_class,
            confusion,
            loss_history: Vec::new(),
        })
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Shape {
                op: "metrics",
                lhs: vec![labels.len()],
                rhs: vec![predictions.len()],
            });
        }
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= num_classes || p >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y.max(p),
                    classes: num_classes,
                });
            }
            confusion[y][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// Plain-text summary: headline figures and the per-class table.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "samples {}  accuracy {:.4}  macro precision {:.4}  macro recall {:.4}  macro F1 {:.4}\n",
            self.samples, self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        );
        s.push_str("class  support  precision  recall  f1\n");
        for c in &self.per_class {
            s.push_str(&format!(
                "{:>5}  {:>7}  {:>9.4}  {:>6.4}  {:.4}\n",
                c.class, c.support, c.precision, c.recall, c.f1
            ));
        }
        s
    }
}

/// Index of the largest logit; ties go to the lower index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
