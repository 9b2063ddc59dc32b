//! Example-based and label-based multilabel metrics.
//!
//! Example-based: subset accuracy (exact vector match rate) and Hamming loss
//! (mean fraction of wrong bits). Label-based: precision, recall and F1 with
//! micro averaging (pooled counts) and macro averaging (mean of per-label
//! ratios). Per-label F1 is `2TP / (2TP + FP + FN)` and macro F1 is the mean of
//! those values, not the harmonic mean of macro precision and recall.
//!
//! **Zero-denominator convention:** any ratio whose denominator is zero counts
//! as 0. A label that never occurs and is never predicted therefore drags
//! macro scores down. This is a deliberate strict choice; pooled micro values
//! are affected only when nothing at all is predicted or present.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{label_name, LabelVector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-label confusion tallies over `n` evaluated examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCounts {
    pub n: u64,
    pub per_label: Vec<ConfusionCounts>,
}

impl LabelCounts {
    pub fn width(&self) -> usize {
        self.per_label.len()
    }

    pub fn pooled(&self) -> ConfusionCounts {
        self.per_label
            .iter()
            .fold(ConfusionCounts::default(), |acc, c| ConfusionCounts {
                tp: acc.tp + c.tp,
                fp: acc.fp + c.fp,
                tn: acc.tn + c.tn,
                fn_: acc.fn_ + c.fn_,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_examples: u64,
    pub subset_accuracy: f64,
    pub hamming_loss: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub labels: LabelCounts,
}

fn check_batch(truths: &[LabelVector], preds: &[LabelVector]) -> Result<usize> {
    if truths.is_empty() {
        return Err(Error::contract("metrics need at least one example"));
    }
    if truths.len() != preds.len() {
        return Err(Error::contract(format!(
            "batch sizes differ: {} truths vs {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let width = truths[0].width();
    if width == 0 {
        return Err(Error::contract("label vectors must have at least one slot"));
    }
    if let Some((i, _)) = truths
        .iter()
        .zip(preds)
        .enumerate()
        .find(|(_, (t, p))| t.width() != width || p.width() != width)
    {
        return Err(Error::contract(format!(
            "label width mismatch at example {i} (expected {width})"
        )));
    }
    Ok(width)
}

pub fn label_counts(truths: &[LabelVector], preds: &[LabelVector]) -> Result<LabelCounts> {
    let width = check_batch(truths, preds)?;
    let mut per_label = vec![ConfusionCounts::default(); width];
    for (t, p) in truths.iter().zip(preds) {
        for (c, counts) in per_label.iter_mut().enumerate() {
            match (t.get(c), p.get(c)) {
                (true, true) => counts.tp += 1,
                (false, true) => counts.fp += 1,
                (false, false) => counts.tn += 1,
                (true, false) => counts.fn_ += 1,
            }
        }
    }
    Ok(LabelCounts {
        n: truths.len() as u64,
        per_label,
    })
}

/// `(subset_accuracy, hamming_loss)`.
pub fn example_metrics(truths: &[LabelVector], preds: &[LabelVector]) -> Result<(f64, f64)> {
    let width = check_batch(truths, preds)?;
    let n = truths.len() as f64;
    let mut exact = 0usize;
    let mut hamming = 0.0;
    for (t, p) in truths.iter().zip(preds) {
        let wrong = t
            .bits()
            .iter()
            .zip(p.bits())
            .filter(|(a, b)| a != b)
            .count();
        if wrong == 0 {
            exact += 1;
        }
        hamming += wrong as f64 / width as f64;
    }
    Ok((exact as f64 / n, hamming / n))
}

pub fn micro_macro(counts: &LabelCounts) -> Aggregates {
    let pooled = counts.pooled();
    let k = counts.width().max(1) as f64;
    let mean = |f: fn(&ConfusionCounts) -> f64| counts.per_label.iter().map(f).sum::<f64>() / k;
    Aggregates {
        micro_precision: pooled.precision(),
        micro_recall: pooled.recall(),
        micro_f1: pooled.f1(),
        macro_precision: mean(ConfusionCounts::precision),
        macro_recall: mean(ConfusionCounts::recall),
        macro_f1: mean(ConfusionCounts::f1),
    }
}

pub fn evaluate(truths: &[LabelVector], preds: &[LabelVector]) -> Result<MetricsReport> {
    let labels = label_counts(truths, preds)?;
    let (subset_accuracy, hamming_loss) = example_metrics(truths, preds)?;
    let agg = micro_macro(&labels);
    Ok(MetricsReport {
        n_examples: labels.n,
        subset_accuracy,
        hamming_loss,
        micro_precision: agg.micro_precision,
        micro_recall: agg.micro_recall,
        micro_f1: agg.micro_f1,
        macro_precision: agg.macro_precision,
        macro_recall: agg.macro_recall,
        macro_f1: agg.macro_f1,
        labels,
    })
}

#[derive(Serialize, Deserialize)]
struct LabelEntry {
    name: String,
    #[serde(flatten)]
    counts: ConfusionCounts,
}

#[derive(Serialize, Deserialize)]
struct ReportRepr {
    n_examples: u64,
    subset_accuracy: f64,
    hamming_loss: f64,
    micro_precision: f64,
    micro_recall: f64,
    micro_f1: f64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
    labels: BTreeMap<usize, LabelEntry>,
}

impl Serialize for MetricsReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let width = self.labels.width();
        ReportRepr {
            n_examples: self.n_examples,
            subset_accuracy: self.subset_accuracy,
            hamming_loss: self.hamming_loss,
            micro_precision: self.micro_precision,
            micro_recall: self.micro_recall,
            micro_f1: self.micro_f1,
            macro_precision: self.macro_precision,
            macro_recall: self.macro_recall,
            macro_f1: self.macro_f1,
            labels: self
                .labels
                .per_label
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    (
                        i,
                        LabelEntry {
                            name: label_name(i, width),
                            counts: *c,
                        },
                    )
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MetricsReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ReportRepr::deserialize(d)?;
        let width = r.labels.len();
        if r.labels.keys().copied().ne(0..width) {
            return Err(serde::de::Error::custom(
                "label indices must be dense from 0",
            ));
        }
        Ok(MetricsReport {
            n_examples: r.n_examples,
            subset_accuracy: r.subset_accuracy,
            hamming_loss: r.hamming_loss,
            micro_precision: r.micro_precision,
            micro_recall: r.micro_recall,
            micro_f1: r.micro_f1,
            macro_precision: r.macro_precision,
            macro_recall: r.macro_recall,
            macro_f1: r.macro_f1,
            labels: LabelCounts {
                n: r.n_examples,
                per_label: r.labels.into_values().map(|e| e.counts).collect(),
            },
        })
    }
}
