//! The suspect record shared by the corpus generator, the models, the
//! crawler and the annotation store, plus JSONL helpers.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Post,
    Comment,
}

/// One post or comment under evaluation, possibly drug-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectIdte {
    pub id: u64,
    pub kind: RecordKind,
    pub parent_id: Option<u64>,
    pub author_id: u64,
    pub text: String,
    #[serde(default)]
    pub hashtags: Vec<String>,
    #[serde(default)]
    pub image_features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelVector>,
}

impl SuspectIdte {
    /// Labels of a record that must carry valid ground truth.
    pub fn ground_truth(&self, width: usize) -> Result<&LabelVector> {
        let labels = self.labels.as_ref().ok_or_else(|| Error::Validation {
            id: self.id.to_string(),
            reason: "record is unlabeled".into(),
        })?;
        if labels.width() != width {
            return Err(Error::Validation {
                id: self.id.to_string(),
                reason: format!("label width {} != {width}", labels.width()),
            });
        }
        if !labels.satisfies_drug_free_rule() {
            return Err(Error::Validation {
                id: self.id.to_string(),
                reason: format!("labels {labels} violate the drug-free rule"),
            });
        }
        Ok(labels)
    }
}

/// Checks that comments point at posts present in `records`.
pub fn check_parents(records: &[SuspectIdte]) -> Result<()> {
    let posts: std::collections::HashSet<u64> = records
        .iter()
        .filter(|r| r.kind == RecordKind::Post)
        .map(|r| r.id)
        .collect();
    for r in records {
        let ok = match (r.kind, r.parent_id) {
            (RecordKind::Post, None) => true,
            (RecordKind::Comment, Some(p)) => posts.contains(&p),
            _ => false,
        };
        if !ok {
            return Err(Error::Validation {
                id: r.id.to_string(),
                reason: "comment parent missing or post with a parent".into(),
            });
        }
    }
    Ok(())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
