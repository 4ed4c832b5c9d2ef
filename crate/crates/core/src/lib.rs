//! Violation-index active learning for cross-modal (photo ↔ sketch) retrieval.
//!
//! The crate scores unlabeled photos by how strongly they intrude on existing
//! photo/sketch pairs, selects query sets with several acquisition strategies, and
//! runs simulated active-learning experiments around a small triplet-trained embedder.

pub mod clustering;
pub mod embedder;
pub mod embedding;
pub mod error;
pub mod format;
pub mod report;
pub mod retrieval;
pub mod runner;
pub mod samplers;
pub mod synth;
pub mod violation;

pub use embedding::{euclidean_distance, EmbeddingMatrix, LabeledPool, Modality, Pairing, Seed, UnlabeledPool};
pub use error::{ContractError, FormatError, RunError};
