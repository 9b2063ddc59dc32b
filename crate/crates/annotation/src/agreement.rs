use std::collections::BTreeMap;

use idte_core::DrugLabel;
use serde::{Deserialize, Serialize};

use crate::record::{AnnotationRecord, Level};
use crate::store::Snapshot;

/// Pairwise exact-agreement rates over items with at least two annotators.
/// Rates are `None` when no such item exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub items_compared: usize,
    pub pairs: usize,
    /// Share of annotator pairs with identical label sets at each level.
    pub levels: BTreeMap<Level, Option<f64>>,
    /// Share of annotator pairs agreeing on whether the category is present
    /// in the union of the three levels.
    pub categories: BTreeMap<DrugLabel, Option<f64>>,
    /// Items where some pair disagrees at some level, by id.
    pub conflicted: Vec<u64>,
}

pub fn compute_agreement(snapshot: &Snapshot) -> AgreementReport {
    let mut pairs = 0usize;
    let mut items = 0usize;
    let mut level_hits: BTreeMap<Level, usize> = Level::ALL.iter().map(|&l| (l, 0)).collect();
    let mut cat_hits: BTreeMap<DrugLabel, usize> = DrugLabel::ALL.iter().map(|&c| (c, 0)).collect();
    let mut conflicted = Vec::new();

    for (&id, by_annotator) in &snapshot.annotations {
        let recs: Vec<&AnnotationRecord> = by_annotator.values().map(|e| &e.record).collect();
        if recs.len() < 2 {
            continue;
        }
        items += 1;
        let merged: Vec<_> = recs.iter().map(|r| r.merged()).collect();
        let mut conflict = false;
        for a in 0..recs.len() {
            for b in a + 1..recs.len() {
                pairs += 1;
                for level in Level::ALL {
                    if recs[a].labels(level) == recs[b].labels(level) {
                        *level_hits.get_mut(&level).expect("level") += 1;
                    } else {
                        conflict = true;
                    }
                }
                for c in DrugLabel::ALL {
                    if merged[a].contains(&c) == merged[b].contains(&c) {
                        *cat_hits.get_mut(&c).expect("category") += 1;
                    }
                }
            }
        }
        if conflict {
            conflicted.push(id);
        }
    }

    let rate = |hits: usize| (pairs > 0).then(|| hits as f64 / pairs as f64);
    AgreementReport {
        items_compared: items,
        pairs,
        levels: level_hits.into_iter().map(|(l, h)| (l, rate(h))).collect(),
        categories: cat_hits.into_iter().map(|(c, h)| (c, rate(h))).collect(),
        conflicted,
    }
}
