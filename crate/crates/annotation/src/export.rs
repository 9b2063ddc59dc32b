use std::collections::BTreeMap;
use std::path::Path;

use idte_core::labels::LABEL_WIDTH;
use idte_core::record::SuspectIdte;
use idte_core::{DrugLabel, LabelVector};
use serde::{Deserialize, Serialize};

use crate::error::{AnnotationError, Result};
use crate::store::Snapshot;

/// An item whose vote is tied on at least one drug category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationItem {
    pub idte_id: u64,
    pub annotators: usize,
    /// Votes per category over the annotators' merged label sets.
    pub votes: BTreeMap<DrugLabel, usize>,
    pub tied: Vec<DrugLabel>,
    pub record: SuspectIdte,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Export {
    pub corpus: Vec<SuspectIdte>,
    pub adjudication: Vec<AdjudicationItem>,
}

/// Majority vote per drug category over each annotator's union of levels.
///
/// A category is set when more than half of the item's annotators chose it.
/// An exact half on any drug category sends the item to adjudication. The
/// drug-free bit is derived from the drug bits, whatever the votes on it.
pub fn export_dataset(snapshot: &Snapshot) -> Result<Export> {
    let mut out = Export::default();
    for (&id, by_annotator) in &snapshot.annotations {
        let n = by_annotator.len();
        let mut votes: BTreeMap<DrugLabel, usize> =
            DrugLabel::ALL.iter().map(|&c| (c, 0)).collect();
        for e in by_annotator.values() {
            for c in e.record.merged() {
                *votes.get_mut(&c).expect("category") += 1;
            }
        }
        let item = snapshot
            .items
            .get(&id)
            .ok_or(AnnotationError::UnknownItem(id))?;
        let tied: Vec<DrugLabel> = votes
            .iter()
            .filter(|(c, &v)| c.is_drug() && 2 * v == n)
            .map(|(&c, _)| c)
            .collect();
        if !tied.is_empty() {
            out.adjudication.push(AdjudicationItem {
                idte_id: id,
                annotators: n,
                votes,
                tied,
                record: item.clone(),
            });
            continue;
        }
        let drugs = votes
            .iter()
            .filter(|(c, &v)| c.is_drug() && 2 * v > n)
            .map(|(c, _)| c.index());
        let labels = LabelVector::from_drugs(LABEL_WIDTH, drugs)?;
        labels.validate_ground_truth()?;
        out.corpus.push(SuspectIdte {
            labels: Some(labels),
            ..item.clone()
        });
    }
    Ok(out)
}

impl Export {
    pub fn corpus_jsonl(&self) -> Result<String> {
        Ok(idte_core::record::to_jsonl(&self.corpus)?)
    }

    pub fn adjudication_jsonl(&self) -> Result<String> {
        Ok(idte_core::record::to_jsonl(&self.adjudication)?)
    }

    pub fn write(&self, corpus: &Path, adjudication: &Path) -> Result<()> {
        std::fs::write(corpus, self.corpus_jsonl()?).map_err(|e| AnnotationError::io(corpus, e))?;
        std::fs::write(adjudication, self.adjudication_jsonl()?)
            .map_err(|e| AnnotationError::io(adjudication, e))
    }
}
