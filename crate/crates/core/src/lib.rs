//! Knowledge distillation for sequence models.
//!
//! The crate is organized around a small set of layers:
//!
//! - [`tensor`] — dense f64 tensors with reverse-mode automatic differentiation,
//!   the numeric substrate for everything else.
//! - [`models`] — transformer-encoder and BiGRU architectures, their parameter
//!   counting, and the binary weight file format.
//! - [`losses`] — the preset registry of distillation losses (soft-label,
//!   hidden-state, cosine, attention, FSP, NST) and weight/temperature
//!   schedulers, extensible with custom entries.
//! - [`config`] — JSON-backed [`config::TrainingConfig`] and
//!   [`config::DistillationConfig`] with strict validation.
//! - [`distill`] — the five training engines (trainer, basic/general
//!   distillers, multi-teacher, multi-task), the adaptor runtime, the Adam
//!   optimizer and checkpoint scheduling.
//! - [`tasks`] — deterministic synthetic datasets (classification, tagging,
//!   span extraction), their evaluation metrics and data augmentation.

pub mod config;
pub mod distill;
pub mod json;
pub mod losses;
pub mod models;
pub mod oracles;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use tensor::{Tensor, TensorError};
