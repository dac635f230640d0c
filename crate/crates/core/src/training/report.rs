use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{F1Report, TrainConfig};
use crate::error::Result;
use crate::model::EncoderConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanisms {
    pub getr: Option<String>,
    pub hal: bool,
    pub tet: bool,
}

/// Everything a run measures except wall-clock time, so that repeated runs
/// serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub mechanisms: Mechanisms,
    pub seed: u64,
    pub parameter_count: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub validation: F1Report,
    pub test: F1Report,
    pub tet_coverage: Option<f64>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

/// Wall-clock measurements, kept apart from [`MetricsReport`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub warmup_seconds: f64,
    pub epoch_seconds: Vec<f64>,
    pub eval_seconds: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn epoch_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_macro_f1\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_macro_f1);
        }
        out
    }

    /// Writes `metrics.json` and `epochs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::corpus::io_write_file(&dir.join("metrics.json"), self.to_json()?.as_bytes())?;
        crate::corpus::io_write_file(&dir.join("epochs.csv"), self.epoch_csv().as_bytes())
    }
}

impl Timings {
    pub fn write(&self, path: &Path) -> Result<()> {
        crate::corpus::io_write_file(path, (serde_json::to_string_pretty(self)? + "\n").as_bytes())
    }
}
