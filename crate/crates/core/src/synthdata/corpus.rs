use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lexicon::{DRUG_TERMS, FILLER, SALES};
use crate::error::{Error, Result};
use crate::labels::{label_name, LabelVector};
use crate::metrics::ConfusionCounts;
use crate::record::{RecordKind, SuspectIdte};
use crate::text::{extract_hashtags, NormalizationRules};

/// How labels depend on the two modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependenceMode {
    /// Labels are carried by text; image cues are independent noise.
    TextOnly,
    /// Labels are carried by the image; text cues are independent noise.
    ImageOnly,
    /// A drug label is set only when both its term and its prototype are
    /// present. Single-cue distractors are emitted with the label unset.
    JointAnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n: usize,
    /// One prior per label slot. Slot 0 is ignored because the drug-free bit
    /// is derived; slots 1.. are independent Bernoulli rates.
    pub priors: Vec<f64>,
    /// Probability that a positive record is topped up to 2..=8 drug labels.
    /// Non-zero values raise the marginals above `priors`.
    pub multi_label_rate: f64,
    pub mode: DependenceMode,
    /// Per absent label, the probability of emitting a single-modality cue
    /// without the label.
    pub distractor_rate: f64,
    pub obfuscation_rate: f64,
    /// Fraction of records emitted as comments on earlier posts.
    pub comment_rate: f64,
    pub lexicons: Vec<Vec<String>>,
    /// One vector per drug; generated from the seed when empty.
    pub prototypes: Vec<Vec<f64>>,
    pub d_img: usize,
    pub prototype_norm: f64,
    pub noise_scale: f64,
    pub num_authors: u64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n: 4648,
            priors: vec![0.0, 0.18, 0.08, 0.08, 0.10, 0.08, 0.06, 0.07, 0.08, 0.05],
            multi_label_rate: 0.0,
            mode: DependenceMode::JointAnd,
            distractor_rate: 0.3,
            obfuscation_rate: 0.0,
            comment_rate: 0.2,
            lexicons: DRUG_TERMS
                .iter()
                .map(|ts| ts.iter().map(|t| t.to_string()).collect())
                .collect(),
            prototypes: Vec::new(),
            d_img: 16,
            prototype_norm: 3.0,
            noise_scale: 0.5,
            num_authors: 500,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn num_drugs(&self) -> usize {
        self.lexicons.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_drugs();
        if c == 0 {
            return Err(Error::contract("corpus needs at least one drug lexicon"));
        }
        if self.priors.len() != c + 1 {
            return Err(Error::contract(format!(
                "invalid priors: {} values for {} label slots",
                self.priors.len(),
                c + 1
            )));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if let Some(p) = self.priors.iter().find(|&&p| !unit(p)) {
            return Err(Error::contract(format!(
                "invalid priors: {p} outside [0, 1]"
            )));
        }
        for (name, v) in [
            ("multi_label_rate", self.multi_label_rate),
            ("distractor_rate", self.distractor_rate),
            ("obfuscation_rate", self.obfuscation_rate),
            ("comment_rate", self.comment_rate),
        ] {
            if !unit(v) {
                return Err(Error::contract(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.d_img == 0
            || self.noise_scale.is_nan()
            || self.noise_scale < 0.0
            || self.prototype_norm.is_nan()
            || self.prototype_norm <= 0.0
        {
            return Err(Error::contract(
                "d_img and prototype_norm must be positive, noise_scale non-negative",
            ));
        }
        if self.num_authors == 0 {
            return Err(Error::contract("num_authors must be positive"));
        }
        let mut seen = HashSet::new();
        for terms in &self.lexicons {
            if terms.is_empty() {
                return Err(Error::contract("every lexicon needs at least one term"));
            }
            for t in terms {
                if t.chars().count() < 3 || !t.chars().all(|ch| ch.is_ascii_lowercase()) {
                    return Err(Error::contract(format!(
                        "lexicon term {t:?} must be at least 3 lowercase ASCII letters"
                    )));
                }
                if !seen.insert(t.as_str()) {
                    return Err(Error::contract(format!("lexicon term {t:?} is shared")));
                }
            }
        }
        if !self.prototypes.is_empty() {
            if self.prototypes.len() != c || self.prototypes.iter().any(|p| p.len() != self.d_img) {
                return Err(Error::contract(format!(
                    "need {c} prototypes of length {}",
                    self.d_img
                )));
            }
            for i in 0..c {
                for j in 0..i {
                    if self.prototypes[i] == self.prototypes[j] {
                        return Err(Error::contract(format!("prototypes {i} and {j} coincide")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tallies of the cue construction for one drug label. `text` and `image`
/// are the confusion counts of a classifier that predicts the label exactly
/// when the corresponding cue is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCueStats {
    pub index: usize,
    pub name: String,
    pub positives: u64,
    pub text: ConfusionCounts,
    pub image: ConfusionCounts,
}

impl LabelCueStats {
    /// Accuracy of the best classifier that sees only this label's text cue:
    /// within each cue group, predict the majority.
    pub fn text_accuracy_ceiling(&self) -> f64 {
        cue_ceiling(&self.text)
    }

    pub fn image_accuracy_ceiling(&self) -> f64 {
        cue_ceiling(&self.image)
    }
}

fn cue_ceiling(c: &ConfusionCounts) -> f64 {
    let n = c.total();
    if n == 0 {
        return 1.0;
    }
    (c.tp.max(c.fp) + c.fn_.max(c.tn)) as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n: u64,
    pub mode: DependenceMode,
    pub labels: Vec<LabelCueStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<SuspectIdte>,
    pub stats: CorpusStats,
    pub prototypes: Vec<Vec<f64>>,
}

pub(crate) fn random_prototypes(
    count: usize,
    dim: usize,
    norm: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| std.sample(rng)).collect();
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * norm / len).collect()
        })
        .collect()
}

/// Case-insensitive homoglyph substitutes per ASCII letter, in a fixed order.
pub(crate) fn homoglyph_inverse() -> BTreeMap<char, Vec<char>> {
    let rules = NormalizationRules::default();
    let mut inv: BTreeMap<char, Vec<char>> = BTreeMap::new();
    for (&from, &to) in rules.homoglyphs() {
        inv.entry(to).or_default().push(from);
    }
    for v in inv.values_mut() {
        v.sort_unstable();
    }
    inv
}

const SEPARATORS: [char; 5] = ['.', '-', '_', '*', '~'];

/// Rewrites `term` with separators, homoglyphs or both, plus random case.
/// The default normalization rules always recover `term`.
pub(crate) fn obfuscate(
    term: &str,
    inv: &BTreeMap<char, Vec<char>>,
    rng: &mut ChaCha8Rng,
) -> String {
    let style = rng.random_range(0..3);
    let use_sep = style != 1;
    let use_glyph = style != 0;
    let letters: Vec<char> = term.chars().collect();
    let forced = if use_glyph {
        let candidates: Vec<usize> = (0..letters.len())
            .filter(|i| inv.contains_key(&letters[*i]))
            .collect();
        candidates.choose(rng).copied()
    } else {
        None
    };
    let mut out: Vec<char> = letters
        .iter()
        .enumerate()
        .map(|(i, &ch)| {
            let glyph = use_glyph && (Some(i) == forced || rng.random_bool(0.3));
            match inv.get(&ch) {
                Some(subs) if glyph => *subs.choose(rng).expect("non-empty"),
                _ if rng.random_bool(0.5) => ch.to_ascii_uppercase(),
                _ => ch,
            }
        })
        .collect();
    if use_sep {
        let sep = *SEPARATORS.choose(rng).expect("non-empty");
        let mut joined = Vec::with_capacity(out.len() * 2);
        for (i, ch) in out.into_iter().enumerate() {
            if i > 0 {
                joined.push(sep);
            }
            joined.push(ch);
        }
        out = joined;
    }
    if out.iter().copied().eq(term.chars()) {
        out[0] = out[0].to_ascii_uppercase();
    }
    out.into_iter().collect()
}

/// Labeled synthetic records with controllable modality dependence.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let c = config.num_drugs();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prototypes = if config.prototypes.is_empty() {
        random_prototypes(c, config.d_img, config.prototype_norm, &mut rng)
    } else {
        config.prototypes.clone()
    };
    let noise = Normal::new(0.0, config.noise_scale)
        .map_err(|e| Error::contract(format!("noise_scale: {e}")))?;
    let inv = homoglyph_inverse();

    let mut stats: Vec<LabelCueStats> = (1..=c)
        .map(|i| LabelCueStats {
            index: i,
            name: label_name(i, c + 1),
            positives: 0,
            text: ConfusionCounts::default(),
            image: ConfusionCounts::default(),
        })
        .collect();

    let mut records = Vec::with_capacity(config.n);
    let mut post_ids: Vec<u64> = Vec::new();
    for id in 0..config.n as u64 {
        let mut drugs: Vec<bool> = (1..=c).map(|i| rng.random_bool(config.priors[i])).collect();
        if drugs.iter().any(|&d| d) && rng.random_bool(config.multi_label_rate) {
            let target = rng.random_range(2..=8usize).min(c);
            let mut absent: Vec<usize> = (0..c).filter(|&i| !drugs[i]).collect();
            absent.shuffle(&mut rng);
            let have = drugs.iter().filter(|&&d| d).count();
            for i in absent.into_iter().take(target.saturating_sub(have)) {
                drugs[i] = true;
            }
        }

        let mut text_cue = vec![false; c];
        let mut image_cue = vec![false; c];
        for i in 0..c {
            let d = config.distractor_rate;
            match config.mode {
                DependenceMode::JointAnd => {
                    if drugs[i] {
                        text_cue[i] = true;
                        image_cue[i] = true;
                    } else if rng.random_bool(d) {
                        if rng.random_bool(0.5) {
                            text_cue[i] = true;
                        } else {
                            image_cue[i] = true;
                        }
                    }
                }
                DependenceMode::TextOnly => {
                    text_cue[i] = drugs[i];
                    image_cue[i] = rng.random_bool(d);
                }
                DependenceMode::ImageOnly => {
                    image_cue[i] = drugs[i];
                    text_cue[i] = rng.random_bool(d);
                }
            }
            let s = &mut stats[i];
            s.positives += u64::from(drugs[i]);
            tally(&mut s.text, drugs[i], text_cue[i]);
            tally(&mut s.image, drugs[i], image_cue[i]);
        }

        let mut words: Vec<String> = Vec::new();
        for _ in 0..rng.random_range(2..=6) {
            words.push(FILLER.choose(&mut rng).expect("filler").to_string());
        }
        for _ in 0..rng.random_range(0..=2) {
            words.push(SALES.choose(&mut rng).expect("sales").to_string());
        }
        for _ in 0..rng.random_range(0..=2) {
            words.push(format!("#{}", FILLER.choose(&mut rng).expect("filler")));
        }
        for (i, _) in text_cue.iter().enumerate().filter(|(_, &t)| t) {
            let term = config.lexicons[i]
                .choose(&mut rng)
                .expect("non-empty lexicon");
            let written = if rng.random_bool(config.obfuscation_rate) {
                obfuscate(term, &inv, &mut rng)
            } else {
                term.clone()
            };
            let hashtag = rng.random_bool(0.5);
            words.push(if hashtag {
                format!("#{written}")
            } else {
                written
            });
        }
        words.shuffle(&mut rng);
        let text = words.join(" ");

        let mut image: Vec<f64> = (0..config.d_img).map(|_| noise.sample(&mut rng)).collect();
        for (i, _) in image_cue.iter().enumerate().filter(|(_, &m)| m) {
            for (x, p) in image.iter_mut().zip(&prototypes[i]) {
                *x += p;
            }
        }

        let is_comment = !post_ids.is_empty() && rng.random_bool(config.comment_rate);
        let parent_id = is_comment.then(|| *post_ids.choose(&mut rng).expect("non-empty"));
        if !is_comment {
            post_ids.push(id);
        }
        let labels = LabelVector::from_drugs(
            c + 1,
            drugs
                .iter()
                .enumerate()
                .filter(|(_, &d)| d)
                .map(|(i, _)| i + 1),
        )?;
        records.push(SuspectIdte {
            id,
            kind: if is_comment {
                RecordKind::Comment
            } else {
                RecordKind::Post
            },
            parent_id,
            author_id: rng.random_range(0..config.num_authors),
            hashtags: extract_hashtags(&text),
            text,
            image_features: image,
            labels: Some(labels),
        });
    }

    Ok(Corpus {
        stats: CorpusStats {
            n: config.n as u64,
            mode: config.mode,
            labels: stats,
        },
        records,
        prototypes,
    })
}

fn tally(c: &mut ConfusionCounts, truth: bool, cue: bool) {
    match (truth, cue) {
        (true, true) => c.tp += 1,
        (false, true) => c.fp += 1,
        (true, false) => c.fn_ += 1,
        (false, false) => c.tn += 1,
    }
}
