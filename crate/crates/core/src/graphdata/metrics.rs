use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// Classification scores over a node mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

/// Accuracy and F1 scores of `pred` against `labels` on the masked nodes.
///
/// Macro F1 averages the classes that occur in the masked labels; weighted
/// F1 weights each class by its masked support. A class with no true and no
/// predicted members scores 0.
pub fn compute_metrics(
    pred: &[usize],
    labels: &[i64],
    mask: &[bool],
    num_classes: usize,
) -> Result<Metrics> {
    if pred.len() != labels.len() || mask.len() != labels.len() {
        return Err(GeoError::Dimension(format!(
            "metrics: {} predictions, {} labels, {} mask entries",
            pred.len(),
            labels.len(),
            mask.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    let mut total = 0usize;
    let mut correct = 0usize;
    for ((&p, &y), _) in pred.iter().zip(labels).zip(mask).filter(|(_, &m)| m) {
        let y = usize::try_from(y)
            .ok()
            .filter(|&y| y < num_classes)
            .ok_or_else(|| GeoError::Contract(format!("masked node has label {y}")))?;
        if p >= num_classes {
            return Err(GeoError::Contract(format!(
                "prediction {p} outside [0, {num_classes})"
            )));
        }
        total += 1;
        support[y] += 1;
        if p == y {
            correct += 1;
            tp[p] += 1;
        } else {
            fp[p] += 1;
        }
    }
    if total == 0 {
        return Err(GeoError::Contract("metrics mask selects no nodes".into()));
    }

    let per_class_f1: Vec<f64> = (0..num_classes)
        .map(|c| {
            let fn_ = support[c] - tp[c];
            let denom = 2 * tp[c] + fp[c] + fn_;
            if denom == 0 {
                0.0
            } else {
                (2 * tp[c]) as f64 / denom as f64
            }
        })
        .collect();
    let present: Vec<usize> = (0..num_classes).filter(|&c| support[c] > 0).collect();
    let macro_f1 = present.iter().map(|&c| per_class_f1[c]).sum::<f64>() / present.len() as f64;
    let weighted_f1 = (0..num_classes)
        .map(|c| support[c] as f64 * per_class_f1[c])
        .sum::<f64>()
        / total as f64;
    Ok(Metrics {
        accuracy: correct as f64 / total as f64,
        weighted_f1,
        macro_f1,
        per_class_f1,
    })
}
