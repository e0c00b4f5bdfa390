//! Minimal pre-norm decoder-only transformer.

mod checkpoint;
mod config;
pub mod engine;
mod params;
mod task;
mod train;

pub use checkpoint::{
    init_model, list_checkpoints, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_FILE_VERSION,
};
pub use config::{ModelConfig, PositionalScheme};
pub use engine::Intervention;
pub use params::{LayerWeights, Weights};
pub(crate) use task::slot_grads_from_embeddings;
pub use task::{
    ablated_eval, cnp_accuracy, cnp_loss, forward, forward_cached, grad_preactivation, target_loss,
    AblationMode, CachedRun, LossKind, Metric, NodeActivations, PreactGrads, Replacement, Side,
};
pub use train::{checkpoint_file_name, train, Optimizer, Schedule};
