//! Annotation store and HTTP API for three-level multilabel labeling.
//!
//! Annotators label each post at the hashtag, image and comment level with
//! any of the ten canonical categories. Submissions go to an append-only
//! JSONL log; the service derives inter-annotator agreement, hashtag weight
//! feedback and a majority-vote labeled corpus from it.

pub mod agreement;
pub mod error;
pub mod export;
pub mod http;
pub mod record;
pub mod store;

pub use agreement::{compute_agreement, AgreementReport};
pub use error::{AnnotationError, Result};
pub use export::{export_dataset, AdjudicationItem, Export};
pub use http::{router, serve};
pub use record::{AnnotationRecord, Level, Submission};
pub use store::{Ack, LogEntry, Snapshot, Store};
