//! Interaction-log ingestion, vocabulary handling, splits, and the synthetic
//! corpus generator.

pub mod grammar;
pub mod slam;
pub mod synth;
pub mod types;
pub mod vocab;

pub use grammar::Grammar;
pub use slam::{emit_slam, ingest_slam, ingest_slam_reader, LabelConvention};
pub use synth::{generate_synthetic_corpus, SynthConfig, SyntheticStudentModel};
pub use types::{split_history, Exercise, Interaction, LearningHistory, DEFAULT_MAX_EXERCISE_LEN};
pub use vocab::{tokenize, Vocabulary, WordId, BOS, EOS, N_RESERVED, PAD, UNK};
