//! Projection of contextual word embeddings into interpretable semantic
//! feature-norm spaces.
//!
//! The pipeline runs embeddings through an [`store::EmbeddingStore`], averages
//! them per word, pairs the averages with [`norms::NormSpace`] targets, and fits
//! an [`mlp::ProjectorModel`]. [`hpo`] tunes the projector, [`predict`] ranks
//! the features predicted for a word in context, and [`dative`] runs the
//! double-object vs prepositional-object recipient study.

pub mod dataset;
pub mod dative;
pub mod extract;
pub mod hpo;
pub mod mlp;
pub mod norms;
pub mod predict;
pub mod store;

pub use dataset::Dataset;
