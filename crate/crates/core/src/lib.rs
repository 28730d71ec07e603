//! Cognitive diagnosis of language-model checkpoints treated as students.
//!
//! Response logs plus a Q-matrix go in; per-concept knowledge states, mastery
//! aggregates and reliability metrics come out. The crate also ships the
//! simulation oracle used to validate the diagnosers and numeric calculators
//! for common unlearning objectives.

pub mod error;
pub mod icdm;
pub mod interaction;
pub mod metrics;
pub mod model;
pub mod ncdm;
pub mod objectives;
pub mod rng;
pub mod simulate;
pub mod tracer;

pub use error::{Error, Result};
pub use model::{
    slice_forget, validate_dataset, Concept, ConceptCatalog, ConceptKind, Dataset, DiagnosisMethod,
    KnowledgeState, Lineage, Observation, QMatrix, Response, ResponseLog, StudentRecord,
    ValidationReport,
};
