//! Word-level text handling: obfuscation normalization, hashtag extraction,
//! vocabulary construction and tokenization.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const RESERVED: [&str; 4] = [PAD, CLS, SEP, UNK];

const DEFAULT_HOMOGLYPHS: &str = include_str!("../data/homoglyphs.txt");
const DEFAULT_SEPARATORS: &[char] = &['.', '-', '_', '*', '~', '|', '/', '+', '=', ':', ','];

/// Parses "<char> <ascii-letter>" lines. Blank lines and lines starting with
/// `#` are skipped.
pub fn parse_homoglyphs(text: &str) -> Result<HashMap<char, char>> {
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || {
            Error::contract(format!(
                "homoglyph rule on line {}: expected \"<char> <ascii-letter>\", got {line:?}",
                lineno + 1
            ))
        };
        let mut parts = line.split_whitespace();
        let (Some(src), Some(dst), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let mut src_chars = src.chars();
        let mut dst_chars = dst.chars();
        let (Some(s), None, Some(d), None) = (
            src_chars.next(),
            src_chars.next(),
            dst_chars.next(),
            dst_chars.next(),
        ) else {
            return Err(bad());
        };
        if !d.is_ascii_lowercase() {
            return Err(bad());
        }
        map.insert(s, d);
    }
    if let Some((k, v)) = map.iter().find(|(_, v)| map.contains_key(v)) {
        return Err(Error::contract(format!(
            "homoglyph target {v} of {k} is itself a mapped character"
        )));
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizationRules {
    homoglyphs: HashMap<char, char>,
    separators: BTreeSet<char>,
    pub map_homoglyphs: bool,
    pub collapse_separators: bool,
    pub lowercase: bool,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        NormalizationRules::new(
            parse_homoglyphs(DEFAULT_HOMOGLYPHS).expect("shipped homoglyph table parses"),
            DEFAULT_SEPARATORS.iter().copied(),
        )
        .expect("shipped separators are valid")
    }
}

impl NormalizationRules {
    pub fn new(
        homoglyphs: HashMap<char, char>,
        separators: impl IntoIterator<Item = char>,
    ) -> Result<Self> {
        let separators: BTreeSet<char> = separators.into_iter().collect();
        if let Some(c) = separators
            .iter()
            .find(|c| c.is_alphanumeric() || c.is_whitespace())
        {
            return Err(Error::contract(format!(
                "separator {c:?} must not be a letter, digit or whitespace"
            )));
        }
        if let Some((k, v)) = homoglyphs.iter().find(|(_, v)| !v.is_ascii_lowercase()) {
            return Err(Error::contract(format!(
                "homoglyph target {v:?} of {k:?} is not a lowercase ASCII letter"
            )));
        }
        Ok(NormalizationRules {
            homoglyphs,
            separators,
            map_homoglyphs: true,
            collapse_separators: true,
            lowercase: true,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NormalizationRules::new(parse_homoglyphs(&text)?, DEFAULT_SEPARATORS.iter().copied())
    }

    /// Adds more mappings, e.g. evasions discovered by annotators.
    pub fn extend_homoglyphs(&mut self, extra: HashMap<char, char>) -> Result<()> {
        let mut merged = self.homoglyphs.clone();
        merged.extend(extra);
        *self = NormalizationRules {
            map_homoglyphs: self.map_homoglyphs,
            collapse_separators: self.collapse_separators,
            lowercase: self.lowercase,
            ..NormalizationRules::new(merged, self.separators.iter().copied())?
        };
        Ok(())
    }

    pub fn homoglyphs(&self) -> &HashMap<char, char> {
        &self.homoglyphs
    }

    pub fn separators(&self) -> impl Iterator<Item = char> + '_ {
        self.separators.iter().copied()
    }

    fn map_char(&self, c: char, out: &mut Vec<char>) {
        let lookup = |c: char| {
            if self.map_homoglyphs {
                self.homoglyphs.get(&c).copied()
            } else {
                None
            }
        };
        if let Some(t) = lookup(c) {
            out.push(t);
        } else if self.lowercase {
            for lc in c.to_lowercase() {
                out.push(lookup(lc).unwrap_or(lc));
            }
        } else {
            out.push(c);
        }
    }
}

/// Undoes common evasion tricks: homoglyphs become ASCII letters, runs like
/// `A.c.i.D` (single letters joined by one repeated separator, at least three
/// letters) are joined, and everything is lowercased. Idempotent.
pub fn normalize_obfuscation(text: &str, rules: &NormalizationRules) -> String {
    let mut chars = Vec::with_capacity(text.len());
    for c in text.chars() {
        rules.map_char(c, &mut chars);
    }
    if rules.collapse_separators {
        chars = collapse_separated_letters(&chars, &rules.separators);
    }
    chars.into_iter().collect()
}

fn collapse_separated_letters(chars: &[char], separators: &BTreeSet<char>) -> Vec<char> {
    let n = chars.len();
    let lone_letter = |i: usize| {
        i < n
            && chars[i].is_alphabetic()
            && (i == 0 || !chars[i - 1].is_alphanumeric())
            && (i + 1 == n || !chars[i + 1].is_alphanumeric())
    };
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if lone_letter(i) && i + 2 < n && separators.contains(&chars[i + 1]) {
            let sep = chars[i + 1];
            let mut end = i;
            while end + 2 < n && chars[end + 1] == sep && lone_letter(end + 2) {
                end += 2;
            }
            let letters = (end - i) / 2 + 1;
            if letters >= 3 {
                out.extend((i..=end).step_by(2).map(|j| chars[j]));
                i = end + 1;
                continue;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    out
}

/// Every maximal `#` + alphanumeric run, lowercased, in order of appearance.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tags = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '#' {
            let start = i + 1;
            let mut end = start;
            while end < chars.len() && chars[end].is_alphanumeric() {
                end += 1;
            }
            if end > start {
                let mut tag = String::from("#");
                for c in &chars[start..end] {
                    tag.extend(c.to_lowercase());
                }
                tags.push(tag);
                i = end;
                continue;
            }
        }
        i += 1;
    }
    tags
}

/// Splits on whitespace and punctuation; `#`-prefixed alphanumeric runs stay
/// whole. No normalization is applied here.
pub fn split_words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let hashtag = chars[i] == '#' && chars.get(i + 1).is_some_and(|c| c.is_alphanumeric());
        if hashtag || chars[i].is_alphanumeric() {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            words.push(chars[start..i].iter().collect());
        } else {
            i += 1;
        }
    }
    words
}

/// Token ↔ id map with the four reserved tokens at ids 0..=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::contract(
                "vocabulary must start with [PAD], [CLS], [SEP], [UNK]",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::contract(format!("token {t:?} appears twice")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Vocabulary::from_tokens(Vec::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Keeps words seen at least `min_freq` times, most frequent first (ties in
/// lexicographic order), at most `max_size` of them after the reserved ids.
pub fn build_vocab<S: AsRef<str>>(
    corpus: &[S],
    min_freq: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::contract(
            "cannot build a vocabulary from an empty corpus",
        ));
    }
    if min_freq == 0 || max_size == 0 {
        return Err(Error::contract("min_freq and max_size must be positive"));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for w in split_words(text.as_ref()) {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(w, c)| *c >= min_freq && !RESERVED.contains(&w.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w))
        .collect();
    Vocabulary::from_tokens(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `[CLS]` followed by the word ids of `text`, truncated to `max_seq`
/// entries. Normalization runs first when `rules` is given.
pub fn tokenize(
    text: &str,
    vocab: &Vocabulary,
    max_seq: usize,
    rules: Option<&NormalizationRules>,
) -> TokenSequence {
    let normalized;
    let text = match rules {
        Some(r) => {
            normalized = normalize_obfuscation(text, r);
            normalized.as_str()
        }
        None => text,
    };
    let mut ids = vec![CLS_ID];
    let mut tokens = vec![CLS.to_string()];
    for w in split_words(text) {
        if ids.len() >= max_seq.max(1) {
            break;
        }
        ids.push(vocab.id(&w).unwrap_or(UNK_ID));
        tokens.push(w);
    }
    TokenSequence { ids, tokens }
}
