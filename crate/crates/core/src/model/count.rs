use serde::{Deserialize, Serialize};

use super::{EncoderConfig, GnnKind};

fn encoder_layer(d: usize, ff: usize) -> usize {
    // attention projections with biases, two norms, two-layer FFN
    4 * (d * d + d) + 4 * d + (d * ff + ff) + (ff * d + d)
}

/// Learnable scalar count, computed in closed form from the config.
pub fn count_parameters(config: &EncoderConfig) -> usize {
    let d = config.d_model;
    let mut total = (config.vocab_size + config.max_len) * d;
    total += config.num_layers * encoder_layer(d, config.d_ff);
    if config.getr.enabled {
        let per_gnn = d * d
            + if config.getr.gnn_kind == GnnKind::Gat { 2 * d } else { 0 }
            + if config.getr.gnn_bias { d } else { 0 };
        total += config.getr.gnn_depth * per_gnn;
    }
    total += config.hal_layers() * encoder_layer(d, config.hal_d_ff());
    total + d * config.num_labels + config.num_labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub candidate: usize,
    pub baseline: usize,
    pub difference: i64,
    pub relative_difference: f64,
}

impl ParityReport {
    pub fn from_counts(candidate: usize, baseline: usize) -> Self {
        let difference = candidate as i64 - baseline as i64;
        Self { candidate, baseline, difference, relative_difference: difference.unsigned_abs() as f64 / baseline.max(1) as f64 }
    }
}

/// Compares a candidate architecture (typically fewer encoder layers plus
/// graph layers) against a baseline.
pub fn parity_report(candidate: &EncoderConfig, baseline: &EncoderConfig) -> ParityReport {
    ParityReport::from_counts(count_parameters(candidate), count_parameters(baseline))
}
