//! Structured periodontitis diagnoses (stage, grade, extent) from free-text
//! clinical notes.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`corpus`]: note and gold-standard ingestion, plus a seeded synthetic
//!   note generator.
//! - [`sectionizer`]: line sections with original-text offsets and the
//!   diagnosis-marker screen.
//! - [`extractor`]: the simple (ordered, complete) and advanced (order-free,
//!   partial) regular-expression grammars and the stage/grade presence filter.
//! - [`normalizer`]: canonical [`Diagnosis`] values and the most-severe
//!   resolver.
//! - [`dataset`]: weak labels as standoff spans and the 8:1:1 split.
//! - [`tagger`]: an averaged-perceptron BIO tagger trained on weak labels.
//! - [`evaluator`]: confusion matrices, precision/recall/specificity/F1 with
//!   macro and weighted averages, and the combined merge strategy.
//!
//! All offsets exposed by this crate are character (Unicode scalar) offsets
//! into the original note text, never byte offsets.

pub mod corpus;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod extractor;
pub mod normalizer;
pub mod sectionizer;
pub mod tagger;
mod text;

pub use corpus::{ClinicalNote, GoldRecord, NoteSource, SynthConfig};
pub use dataset::{AnnotatedSentence, DatasetSplit, EntityLabel, EntitySpan};
pub use error::{Error, Result};
pub use evaluator::{Attribute, ConfusionMatrix, MetricsReport};
pub use extractor::{Method, RawCapture};
pub use normalizer::{Diagnosis, Extent, Grade, Stage};
pub use sectionizer::Section;
pub use tagger::TaggerModel;
