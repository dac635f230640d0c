use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::batching::BatchingConfig;
use crate::error::{Error, Result};
use crate::lexicon::TetMode;
use crate::model::{EncoderConfig, GnnKind};

use super::AdamWConfig;

/// Which transfer mechanisms a run uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    /// Train on LRL data alone, without HRL data or warm start.
    pub scratch: bool,
    pub hal: bool,
    pub tet: bool,
    pub getr: Option<GnnKind>,
}

impl Method {
    /// Method names accepted by experiment files.
    pub const CATALOG: [&'static str; 9] =
        ["scratch", "joint", "hal", "hal+tet", "getr_gcn", "getr_gat", "getr_gat+hal", "getr_gat+tet", "getr_gat+hal+tet"];

    pub const JOINT: Method = Method { scratch: false, hal: false, tet: false, getr: None };

    pub fn getr_gat() -> Self {
        Self { getr: Some(GnnKind::Gat), ..Self::JOINT }
    }

    pub fn hal() -> Self {
        Self { hal: true, ..Self::JOINT }
    }

    pub fn name(&self) -> String {
        if self.scratch {
            return "scratch".into();
        }
        let mut parts = Vec::new();
        match self.getr {
            Some(GnnKind::Gcn) => parts.push("getr_gcn"),
            Some(GnnKind::Gat) => parts.push("getr_gat"),
            None => {}
        }
        if self.hal {
            parts.push("hal");
        }
        if self.tet {
            parts.push("tet");
        }
        if parts.is_empty() {
            "joint".into()
        } else {
            parts.join("+")
        }
    }

    pub fn in_catalog(&self) -> bool {
        Self::CATALOG.contains(&self.name().as_str())
    }

    /// Encoder config with this method's modules switched on or off.
    pub fn apply(&self, base: &EncoderConfig) -> EncoderConfig {
        let mut c = base.clone();
        c.getr.enabled = self.getr.is_some();
        if let Some(kind) = self.getr {
            c.getr.gnn_kind = kind;
        }
        c.hal.enabled = self.hal;
        c
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Method::JOINT;
        for part in s.trim().split('+').map(str::trim) {
            match part {
                "scratch" => m.scratch = true,
                "joint" => {}
                "hal" => m.hal = true,
                "tet" => m.tet = true,
                "getr_gcn" | "getr-gcn" => m.getr = Some(GnnKind::Gcn),
                "getr_gat" | "getr-gat" => m.getr = Some(GnnKind::Gat),
                other => return Err(Error::Config(format!("unknown method component {other:?} in {s:?}"))),
            }
        }
        if m.scratch && (m.hal || m.tet || m.getr.is_some()) {
            return Err(Error::Config(format!("method {s:?}: scratch training cannot be combined with transfer mechanisms")));
        }
        Ok(m)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.name()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Batches per epoch; by default enough to visit the HRL training set
    /// once (LRL set for scratch runs).
    pub batches_per_epoch: Option<usize>,
    /// HRL-only epochs that produce the warm start of non-scratch runs.
    pub warmup_epochs: usize,
    pub optimizer: AdamWConfig,
    /// Learning rate of scratch runs, which replaces `optimizer.lr` there.
    pub scratch_lr: f64,
    pub seed: u64,
    /// Weight λ of the KL term on mixed samples.
    pub aug_weight: f64,
    /// Fraction ρ of non-sequential graph edges kept.
    pub retention: f64,
    pub method: Method,
    pub batching: BatchingConfig,
    pub tet_mode: TetMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batches_per_epoch: None,
            warmup_epochs: 3,
            optimizer: AdamWConfig::default(),
            scratch_lr: 3e-4,
            seed: 0,
            aug_weight: 1.0,
            retention: 1.0,
            method: Method::JOINT,
            batching: BatchingConfig::default(),
            tet_mode: TetMode::Prose,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::Config("batches_per_epoch must be positive".into()));
        }
        if !(self.aug_weight >= 0.0) {
            return Err(Error::Config(format!("aug_weight {} must be non-negative", self.aug_weight)));
        }
        if !(0.0..=1.0).contains(&self.retention) {
            return Err(Error::Config(format!("retention {} outside [0, 1]", self.retention)));
        }
        if !(self.optimizer.lr > 0.0) || !(self.scratch_lr > 0.0) || self.optimizer.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be positive and weight decay non-negative".into()));
        }
        self.batching.validate()
    }

    /// Optimizer settings for this config's method.
    pub fn optimizer_for_method(&self) -> AdamWConfig {
        let mut o = self.optimizer;
        if self.method.scratch {
            o.lr = self.scratch_lr;
        }
        o
    }
}
