//! Targeted curation of pairwise preference labels.
//!
//! A cheap annotator labels a corpus, a Bradley-Terry reward model is
//! trained on it, and the model's ranked reward gaps tell where the labels
//! are trustworthy, where they are inverted, and where a small human batch
//! pays off most.

pub mod annotate;
pub mod curve;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod mix;
pub mod report;
pub mod reward;

pub use annotate::{AnnotationQueue, Annotator, AnnotatorSpec, OracleHuman, SimulatedLlm};
pub use curve::{Landmarks, RewardCurve};
pub use dataset::{Corpus, Label, OracleStore, Orientation, PairId, PreferencePair, SynthParams};
pub use engine::{CurationConfig, RunConfig, RunInputs, RunReport, RunStatus};
pub use error::{Error, Result};
pub use reward::{Arch, RewardModel, TrainConfig};
