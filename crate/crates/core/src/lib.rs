//! Role-circuit discovery on small decoder-only transformers.
//!
//! The crate covers the full analysis loop:
//!
//! - [`graph`]: the module × position computational DAG, circuits, and the
//!   graph file / DOT exports.
//! - [`model`]: a minimal pre-norm transformer with per-node activation
//!   caching, per-slot pre-activation gradients, edge-level interventions and
//!   a deterministic checkpointing trainer.
//! - [`dataset`]: role-cross minimal pairs, paraphrase controls and the
//!   closed-vocabulary tokenizer.
//! - [`attribution`]: integrated-gradient edge attribution patching, score
//!   normalisation, circuit extraction and faithfulness.
//! - [`metrics`]: sparsity, structural and cross-model similarity metrics.
//! - [`emergence`]: change-point fitting, emergence markers and the
//!   checkpoint-timeline pipeline.

pub mod attribution;
pub mod dataset;
pub mod emergence;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
