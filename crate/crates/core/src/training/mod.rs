//! Losses, the optimizer, macro-F1, and the end-to-end training loop.

mod config;
mod data;
mod losses;
mod metrics;
mod optim;
mod report;
mod run;

pub use config::{Method, TrainConfig};
pub use data::{joint_tokenizer, PreparedData, TokenizerConfig};
pub use losses::{cross_entropy_loss, kl_divergence_loss};
pub use metrics::{macro_f1, F1Report};
pub use optim::{AdamW, AdamWConfig};
pub use report::{EpochRecord, Mechanisms, MetricsReport, Timings};
pub use run::{evaluate, fit_encoder, predict, pretrain_hrl, stream_rng, train_run, transfer_matching, EvalResult, TrainOutcome};
