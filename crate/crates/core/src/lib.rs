//! Goal-oriented latent factor discovery.
//!
//! The pipeline has four stages:
//!
//! 1. [`proposer`] asks an LLM for goal-related properties of every training
//!    document and deduplicates them into a [`proposer::PropertyPool`].
//! 2. [`linker`] trains a dual encoder on the proposal links and scores every
//!    (document, property) pair into a [`linker::CompatibilityMatrix`].
//! 3. [`corex`] gaussianizes the matrix, fits a modular linear latent factor
//!    model and groups properties into factors.
//! 4. [`evalharness`] measures the latent space on retrieval and probing tasks.
//!
//! [`corpus_store`] holds documents and artifact serialization, [`pipeline`]
//! wires the stages together for the `goalfactor` binary.

pub mod corex;
pub mod corpus_store;
pub mod evalharness;
pub mod linker;
pub mod optim;
pub mod pipeline;
pub mod proposer;

pub use corex::{CorexModel, FactorAssignment, Gaussianizer};
pub use corpus_store::{Corpus, Document, Goal, Split};
pub use linker::{CompatibilityMatrix, Encoder};
pub use proposer::{Property, PropertyPool};
