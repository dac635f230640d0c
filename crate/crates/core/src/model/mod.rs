//! The encoder: embeddings, encoder layers, graph layers, the
//! graph-enhanced attention block, hidden-space mixing and parameter counts.

mod checkpoint;
mod config;
mod count;
mod forward;
mod hal;
pub mod layers;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{AlphaMode, EncoderConfig, GetrConfig, GnnKind, HalConfig};
pub use count::{count_parameters, parity_report, ParityReport};
pub use forward::{Batch, ForwardInputs, ForwardOutput, GraphOperator, HalPlan, Model};
pub use hal::{dynamic_alpha, hal_mix, hal_mix_positions, pair_for_mixing};
pub use params::{param_specs, Init, ParamSpec, ParamStore, EMBED_STD};
