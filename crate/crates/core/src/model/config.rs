use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gcn,
    Gat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    Fixed,
    /// Linear decay from 1 at the first step to 0 at the last.
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GetrConfig {
    pub enabled: bool,
    pub gnn_kind: GnnKind,
    pub gnn_depth: usize,
    /// Encoder layer replaced by the graph-enhanced block; the last layer when unset.
    pub insertion_index: Option<usize>,
    pub gnn_bias: bool,
}

impl Default for GetrConfig {
    fn default() -> Self {
        Self { enabled: false, gnn_kind: GnnKind::Gat, gnn_depth: 2, insertion_index: None, gnn_bias: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalConfig {
    pub enabled: bool,
    /// Extra layers above the encoder; mixing happens at each of their outputs.
    pub depth: usize,
    pub alpha_mode: AlphaMode,
    pub alpha: f64,
    /// Feed-forward width of the extra layers; `d_model` when unset.
    pub d_ff: Option<usize>,
}

impl Default for HalConfig {
    fn default() -> Self {
        Self { enabled: false, depth: 2, alpha_mode: AlphaMode::Fixed, alpha: 0.2, d_ff: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub num_layers: usize,
    pub max_len: usize,
    pub task: Task,
    /// Classes (sentence task) or tags (labeling task).
    pub num_labels: usize,
    pub getr: GetrConfig,
    pub hal: HalConfig,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            d_model: 64,
            num_heads: 4,
            d_ff: 128,
            num_layers: 4,
            max_len: 32,
            task: Task::SentenceClassification,
            num_labels: 3,
            getr: GetrConfig::default(),
            hal: HalConfig::default(),
            dropout: 0.1,
            layer_norm_eps: 1e-5,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.vocab_size < 4 || self.d_model == 0 || self.max_len < 2 || self.num_labels == 0 {
            return err("vocab_size ≥ 4, d_model ≥ 1, max_len ≥ 2 and num_labels ≥ 1 are required".into());
        }
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return err(format!("d_model {} is not divisible by num_heads {}", self.d_model, self.num_heads));
        }
        if self.d_ff == 0 {
            return err("d_ff must be positive".into());
        }
        if self.getr.enabled {
            if self.getr.gnn_depth == 0 {
                return err("getr.gnn_depth must be at least 1".into());
            }
            if self.getr_index().is_none_or(|i| i >= self.num_layers) {
                return err(format!(
                    "getr.insertion_index must be below num_layers {} (got {:?})",
                    self.num_layers, self.getr.insertion_index
                ));
            }
        }
        if self.hal.enabled && !(0.0..=1.0).contains(&self.hal.alpha) {
            return err(format!("hal.alpha {} outside [0, 1]", self.hal.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.layer_norm_eps <= 0.0 {
            return err("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Index of the graph-enhanced layer when GETR is enabled.
    pub fn getr_index(&self) -> Option<usize> {
        if !self.getr.enabled {
            return None;
        }
        match self.getr.insertion_index {
            Some(i) => Some(i),
            None => self.num_layers.checked_sub(1),
        }
    }

    pub fn hal_layers(&self) -> usize {
        if self.hal.enabled {
            self.hal.depth
        } else {
            0
        }
    }

    pub fn hal_d_ff(&self) -> usize {
        self.hal.d_ff.unwrap_or(self.d_model)
    }
}
