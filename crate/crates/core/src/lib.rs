//! Core library for reconstructing, filtering and analyzing
//! learner-communication networks from MOOC discussion-forum event logs.
//!
//! The pipeline stages map onto modules:
//!
//! - [`model`] / [`parse`]: canonical schema, validated ingestion, survey linking
//! - [`descriptives`]: activity series, participation and survey-rate summaries
//! - [`network`]: time-windowed, sub-forum-scoped co-posting networks
//! - [`backbone`]: significance filtering against a fixed-degree bipartite null
//! - [`robustness`]: attack curves, vulnerability index, critical sets
//! - [`diffusion`]: susceptible-infected spread on static and temporal networks
//! - [`dialogue`]: human-coded response labels, agreement, code distributions
//! - [`typology`]: learner feature matrices and ARD-pruned nonnegative factorization
//! - [`experiment`]: email treatment assignment, thread selection and engagement analysis
//!
//! All randomness is driven by explicit seeds through [`seeding`]; identical
//! seeds give bit-identical results regardless of thread scheduling.

pub mod backbone;
pub mod descriptives;
pub mod dialogue;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod mathutil;
pub mod model;
pub mod network;
pub mod parse;
pub mod robustness;
pub mod seeding;
pub mod typology;

pub use error::{Error, Result};
