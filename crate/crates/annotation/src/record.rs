use std::collections::BTreeSet;

use chrono::{DateTime, SecondsFormat, Utc};
use idte_core::DrugLabel;
use serde::{Deserialize, Serialize};

use crate::error::{AnnotationError, Result};

/// The three levels an item is labeled at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Hashtag,
    Image,
    Comment,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Hashtag, Level::Image, Level::Comment];

    pub fn field(self) -> &'static str {
        match self {
            Level::Hashtag => "hashtag_labels",
            Level::Image => "image_labels",
            Level::Comment => "comment_labels",
        }
    }
}

/// An annotation as posted by a client, before validation. Categories are
/// free strings so that bad values can be reported by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub idte_id: u64,
    pub annotator_id: String,
    #[serde(default)]
    pub hashtag_labels: Vec<String>,
    #[serde(default)]
    pub image_labels: Vec<String>,
    #[serde(default)]
    pub comment_labels: Vec<String>,
    /// RFC 3339; the server clock is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

pub type LabelSet = BTreeSet<DrugLabel>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub idte_id: u64,
    pub annotator_id: String,
    pub hashtag_labels: LabelSet,
    pub image_labels: LabelSet,
    pub comment_labels: LabelSet,
    pub created_at: String,
}

impl AnnotationRecord {
    pub fn labels(&self, level: Level) -> &LabelSet {
        match level {
            Level::Hashtag => &self.hashtag_labels,
            Level::Image => &self.image_labels,
            Level::Comment => &self.comment_labels,
        }
    }

    /// Union of the three levels.
    pub fn merged(&self) -> LabelSet {
        Level::ALL
            .iter()
            .flat_map(|&l| self.labels(l).iter().copied())
            .collect()
    }

    /// Checks the per-level invariants of an already-typed record.
    pub fn check(&self) -> Result<()> {
        if self.annotator_id.trim().is_empty() {
            return Err(AnnotationError::Invalid("annotator_id is empty".into()));
        }
        for level in Level::ALL {
            let set = self.labels(level);
            if set.contains(&DrugLabel::NonDrug) && set.len() > 1 {
                return Err(AnnotationError::MixedNonDrug {
                    level: level.field(),
                });
            }
        }
        DateTime::parse_from_rfc3339(&self.created_at).map_err(|e| {
            AnnotationError::Invalid(format!("created_at {:?}: {e}", self.created_at))
        })?;
        Ok(())
    }
}

fn parse_level(level: Level, raw: &[String]) -> Result<LabelSet> {
    raw.iter()
        .map(|v| {
            v.parse::<DrugLabel>()
                .map_err(|value| AnnotationError::InvalidCategory {
                    level: level.field(),
                    value,
                })
        })
        .collect()
}

pub fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Submission {
    /// Parses categories and checks invariants. Item existence is checked by
    /// the store.
    pub fn into_record(self) -> Result<AnnotationRecord> {
        let record = AnnotationRecord {
            idte_id: self.idte_id,
            hashtag_labels: parse_level(Level::Hashtag, &self.hashtag_labels)?,
            image_labels: parse_level(Level::Image, &self.image_labels)?,
            comment_labels: parse_level(Level::Comment, &self.comment_labels)?,
            annotator_id: self.annotator_id,
            created_at: self.created_at.unwrap_or_else(now_rfc3339),
        };
        record.check()?;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(h: &[&str], i: &[&str], c: &[&str]) -> Submission {
        let v = |x: &[&str]| x.iter().map(|s| s.to_string()).collect();
        Submission {
            idte_id: 1,
            annotator_id: "ann".into(),
            hashtag_labels: v(h),
            image_labels: v(i),
            comment_labels: v(c),
            created_at: Some("2024-01-02T03:04:05Z".into()),
        }
    }

    #[test]
    fn valid_and_merged() {
        let r = sub(&["marijuana"], &["marijuana", "xanax"], &[])
            .into_record()
            .unwrap();
        let names: Vec<_> = r.merged().iter().map(|l| l.name()).collect();
        assert_eq!(names, ["marijuana", "xanax"]);
    }

    #[test]
    fn unknown_category_named() {
        let err = sub(&[], &["heroin"], &[]).into_record().unwrap_err();
        assert_eq!(err.status(), 422);
        assert!(err.to_string().contains("heroin"));
        assert!(err.to_string().contains("image_labels"));
    }

    #[test]
    fn non_drug_exclusive_per_level() {
        let err = sub(&["non_drug", "lsd"], &[], &[])
            .into_record()
            .unwrap_err();
        assert!(matches!(
            err,
            AnnotationError::MixedNonDrug {
                level: "hashtag_labels"
            }
        ));
        // allowed across different levels
        sub(&["non_drug"], &["lsd"], &[]).into_record().unwrap();
    }

    #[test]
    fn timestamps() {
        let mut s = sub(&[], &[], &[]);
        s.created_at = Some("yesterday".into());
        assert!(s.into_record().is_err());
        let mut s = sub(&[], &[], &[]);
        s.created_at = None;
        let r = s.into_record().unwrap();
        assert!(r.created_at.ends_with('Z'));
    }

    #[test]
    fn serialized_names() {
        let r = sub(&["other_drugs"], &[], &["non_drug"])
            .into_record()
            .unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["hashtag_labels"], serde_json::json!(["other_drugs"]));
        assert_eq!(json["comment_labels"], serde_json::json!(["non_drug"]));
    }
}
