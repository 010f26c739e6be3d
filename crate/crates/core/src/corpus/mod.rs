//! Deterministic synthetic multi-speaker corpus, transcript corruption and
//! character error rate.

mod cer;
mod dataset;
mod noise;
mod render;

pub use cer::{cer, edit_distance, CerTally};
pub use dataset::{
    aligned_durations, frames_path, generate_corpus, manifest_path, parse_tokens, read_corpus,
    write_corpus, Corpus, CorpusSpec, Utterance,
};
pub use noise::{corrupt, CorruptionMethod, CorruptionSpec, Corrupter};
pub use render::{
    duration_rule, render_utterance, rule_durations, speaker_transform, token_prototype,
    OracleDecoder,
};

/// Token id in `0..vocab_size`.
pub type Token = u32;

/// Default vocabulary size.
pub const DEFAULT_VOCAB: usize = 40;
