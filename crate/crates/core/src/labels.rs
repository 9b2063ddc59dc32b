//! The ten canonical categories and the multilabel vector over them.
//!
//! Index 0 is the drug-free bit. For ground truth it is set exactly when no
//! drug bit is set; predictions are thresholded per label and may violate
//! that rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of drug categories (indices 1..=9).
pub const NUM_DRUGS: usize = 9;
/// Drug categories plus the drug-free bit.
pub const LABEL_WIDTH: usize = NUM_DRUGS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrugLabel {
    NonDrug,
    Marijuana,
    Codeine,
    Mdma,
    Xanax,
    Painkillers,
    Mushrooms,
    Lsd,
    Cocaine,
    OtherDrugs,
}

impl DrugLabel {
    pub const ALL: [DrugLabel; LABEL_WIDTH] = [
        DrugLabel::NonDrug,
        DrugLabel::Marijuana,
        DrugLabel::Codeine,
        DrugLabel::Mdma,
        DrugLabel::Xanax,
        DrugLabel::Painkillers,
        DrugLabel::Mushrooms,
        DrugLabel::Lsd,
        DrugLabel::Cocaine,
        DrugLabel::OtherDrugs,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DrugLabel::NonDrug => "non_drug",
            DrugLabel::Marijuana => "marijuana",
            DrugLabel::Codeine => "codeine",
            DrugLabel::Mdma => "mdma",
            DrugLabel::Xanax => "xanax",
            DrugLabel::Painkillers => "painkillers",
            DrugLabel::Mushrooms => "mushrooms",
            DrugLabel::Lsd => "lsd",
            DrugLabel::Cocaine => "cocaine",
            DrugLabel::OtherDrugs => "other_drugs",
        }
    }

    pub fn is_drug(self) -> bool {
        self != DrugLabel::NonDrug
    }
}

impl fmt::Display for DrugLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DrugLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Name of label `index` in a vector of `width` slots: the canonical name
/// when the width is the canonical ten, `label_<i>` otherwise.
pub fn label_name(index: usize, width: usize) -> String {
    match DrugLabel::from_index(index) {
        Some(l) if width == LABEL_WIDTH => l.name().to_string(),
        _ => format!("label_{index}"),
    }
}

/// Binary multilabel vector. Serialized as an array of 0/1 integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelVector(Vec<bool>);

impl LabelVector {
    pub fn new(bits: Vec<bool>) -> Self {
        LabelVector(bits)
    }

    pub fn zeros(width: usize) -> Self {
        LabelVector(vec![false; width])
    }

    /// Ground-truth vector of `width` slots with the given drug indices set
    /// and the drug-free bit derived.
    pub fn from_drugs(width: usize, drugs: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut bits = vec![false; width];
        for d in drugs {
            if d == 0 || d >= width {
                return Err(Error::contract(format!(
                    "drug index {d} outside 1..{width}"
                )));
            }
            bits[d] = true;
        }
        bits[0] = !bits[1..].iter().any(|&b| b);
        Ok(LabelVector(bits))
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn drug_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn has_drug(&self) -> bool {
        self.0.iter().skip(1).any(|&b| b)
    }

    /// Ground-truth check: slot 0 is set iff no drug slot is set.
    pub fn satisfies_drug_free_rule(&self) -> bool {
        !self.0.is_empty() && self.0[0] != self.has_drug()
    }

    pub fn validate_ground_truth(&self) -> Result<()> {
        if self.satisfies_drug_free_rule() {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "label vector {self} violates the drug-free rule"
            )))
        }
    }

    pub fn complement(&self) -> Self {
        LabelVector(self.0.iter().map(|b| !b).collect())
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(if *b { "1" } else { "0" })?;
        }
        f.write_str("]")
    }
}

impl Serialize for LabelVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|&b| u8::from(b)))
    }
}

impl<'de> Deserialize<'de> for LabelVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "label value {other} is not 0 or 1"
                ))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(LabelVector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order() {
        let names: Vec<_> = DrugLabel::ALL.iter().map(|l| l.name()).collect();
        assert_eq!(
            names,
            [
                "non_drug",
                "marijuana",
                "codeine",
                "mdma",
                "xanax",
                "painkillers",
                "mushrooms",
                "lsd",
                "cocaine",
                "other_drugs"
            ]
        );
        assert_eq!("lsd".parse::<DrugLabel>().unwrap(), DrugLabel::Lsd);
        assert!("heroin".parse::<DrugLabel>().is_err());
    }

    #[test]
    fn drug_free_bit_is_derived() {
        let none = LabelVector::from_drugs(LABEL_WIDTH, []).unwrap();
        assert!(none.get(0) && !none.has_drug());
        let some = LabelVector::from_drugs(LABEL_WIDTH, [1, 8]).unwrap();
        assert!(!some.get(0));
        assert!(some.satisfies_drug_free_rule());
        assert!(LabelVector::from_drugs(LABEL_WIDTH, [0]).is_err());
    }

    #[test]
    fn rule_violations_detected() {
        let mut v = LabelVector::from_drugs(LABEL_WIDTH, [3]).unwrap();
        v.set(0, true);
        assert!(v.validate_ground_truth().is_err());
        assert!(!LabelVector::zeros(LABEL_WIDTH).satisfies_drug_free_rule());
    }

    #[test]
    fn serde_as_integers() {
        let v = LabelVector::from_drugs(3, [2]).unwrap();
        assert_eq!(serde_json::to_string(&v).unwrap(), "[0,0,1]");
        let back: LabelVector = serde_json::from_str("[0,0,1]").unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<LabelVector>("[0,2]").is_err());
    }
}
