use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, Model, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: config plus parameters by canonical name.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: EncoderConfig,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>) -> Self {
        Self { version: CHECKPOINT_VERSION, config: model.config.clone(), params: model.params.clone() }
    }

    pub fn into_model(self) -> Result<Model<f32>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", self.version)));
        }
        Model::from_parts(self.config, self.params)
    }
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model))?;
    crate::corpus::io_write_file(path, text.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.into_model()
}
