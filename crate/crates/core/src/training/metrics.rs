use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
    pub support: Vec<usize>,
}

/// Unweighted mean of per-class F1 over all `num_labels` classes; a class
/// never predicted and never gold scores 0. Rows with `mask` false are
/// skipped.
pub fn macro_f1(preds: &[usize], golds: &[usize], num_labels: usize, mask: Option<&[bool]>) -> Result<F1Report> {
    if preds.len() != golds.len() || mask.is_some_and(|m| m.len() != preds.len()) {
        return Err(Error::Dimension(format!("{} predictions for {} gold labels", preds.len(), golds.len())));
    }
    let (mut tp, mut fp, mut fneg) = (vec![0usize; num_labels], vec![0usize; num_labels], vec![0usize; num_labels]);
    let mut seen = 0;
    for (i, (&p, &g)) in preds.iter().zip(golds).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if p >= num_labels || g >= num_labels {
            return Err(Error::Index { what: "labels", index: p.max(g), size: num_labels });
        }
        seen += 1;
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[g] += 1;
        }
    }
    if seen == 0 {
        return Err(Error::Contract("macro-F1 over an empty evaluation set".into()));
    }
    let per_class: Vec<f64> = (0..num_labels)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fneg[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .collect();
    let support = (0..num_labels).map(|k| tp[k] + fneg[k]).collect();
    Ok(F1Report { macro_f1: per_class.iter().sum::<f64>() / num_labels as f64, per_class, support })
}
