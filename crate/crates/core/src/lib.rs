//! Shared-backbone multi-task transformer toolkit.
//!
//! Single-task models are partially fine-tuned on top of a common frozen
//! base, optionally distilled to fewer task-specific layers, and merged into
//! one model whose frozen prefix is computed once for every task.

pub mod alloc;
pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod merge;
pub mod metrics;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
