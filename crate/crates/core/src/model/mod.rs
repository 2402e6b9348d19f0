//! The multi-branch MIL classifier.

mod checkpoint;
mod config;
mod mil;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{Aggregation, ModelConfig, SelectionMode};
pub use mil::{
    backward, forward, predict_proba, ForwardArtifacts, GradientNorms, ModelParams, ModelTape,
};
