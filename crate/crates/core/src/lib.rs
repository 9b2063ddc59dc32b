//! Multimodal multilabel detection of illicit drug trafficking events.
//!
//! The crate bundles everything needed to run desk-scale experiments without
//! external data: a small reverse-mode tensor engine, a word-level text
//! pipeline with obfuscation normalization, a multimodal bitransformer and
//! its fusion baselines, multilabel metrics, synthetic corpus and platform
//! generators, a hashtag-expansion crawler and hashtag co-occurrence analysis.

pub mod crawler;
pub mod error;
pub mod graph;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod record;
pub mod synthdata;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
pub use labels::{DrugLabel, LabelVector};
