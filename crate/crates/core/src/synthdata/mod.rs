//! Seeded generators standing in for real data: a labeled multimodal corpus
//! a social platform with planted dealer accounts, and block-structured
//! graphs for community detection.
//!
//! Image modality is a feature vector (prototype sums plus Gaussian noise)
//! rather than pixels.

mod blocks;
mod corpus;
pub mod lexicon;
mod platform;

pub use crate::record::{RecordKind, SuspectIdte};
pub use blocks::planted_blocks;
pub use corpus::{
    generate_corpus, Corpus, CorpusConfig, CorpusStats, DependenceMode, LabelCueStats,
};
pub use platform::{
    synth_platform, PlatformComment, PlatformConfig, PlatformGraph, PlatformPost, User,
};
