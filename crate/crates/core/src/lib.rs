//! Training-free, vocabulary-free fine-grained recognition.
//!
//! The pipeline discovers candidate class names from a few unlabeled images,
//! grounds each name in generated context sentences, keeps the names that are
//! visually relevant, and classifies test images with a classifier that couples
//! text and visual prototypes. All model inference sits behind the provider
//! traits in [`providers`].

pub mod classifier;
pub mod discovery;
pub mod error;
pub mod evaluation;
pub mod grounding;
pub mod prompts;
pub mod providers;
pub mod refinement;
pub mod runner;
pub mod vector;
pub mod workers;

pub use error::{Error, Result, Stage};
pub use vector::{cosine, mean_of_normalized, normalize, EmbeddingVector, UnitVector};
