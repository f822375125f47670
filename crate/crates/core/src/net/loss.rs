use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean loss over `samples` examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub samples: usize,
}

/// Softmax cross-entropy averaged over the batch, with its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(
    logits: &[f64],
    classes: usize,
    labels: &[usize],
) -> Result<(LossValue, Vec<f64>)> {
    let batch = labels.len();
    if batch == 0 || logits.len() != batch * classes {
        return Err(Error::ShapeMismatch {
            expected: vec![batch, classes],
            actual: vec![logits.len()],
        });
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let inv_b = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label];
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (gi, v) in g.iter_mut().zip(row) {
            *gi = (v - lse).exp() * inv_b;
        }
        g[label] -= inv_b;
    }
    Ok((
        LossValue {
            value: total * inv_b,
            samples: batch,
        },
        grad,
    ))
}
