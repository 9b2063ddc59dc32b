//! Word lists shared by the corpus and platform generators.

use crate::labels::NUM_DRUGS;

/// Slang terms per drug category, in category order (marijuana first).
pub const DRUG_TERMS: [&[&str]; NUM_DRUGS] = [
    &["weed", "kush", "cannabis", "thc", "dabs"],
    &["codeine", "lean", "sizzurp", "drank"],
    &["mdma", "molly", "ecstasy", "xtc"],
    &["xanax", "xans", "alprazolam", "zanbars"],
    &["oxy", "percs", "oxycodone", "vicodin"],
    &["shrooms", "psilocybin", "mushies"],
    &["lsd", "acid", "blotter", "tabs"],
    &["coke", "cocaine", "yayo", "blow"],
    &["meth", "ketamine", "dmt", "heroin"],
];

/// Everyday words used as filler text in every record.
pub const FILLER: &[&str] = &[
    "love", "sunset", "beach", "friends", "today", "weekend", "coffee", "gym", "happy", "vibes",
    "travel", "food", "music", "night", "city", "summer", "style", "photo", "dog", "family",
    "party", "life", "goals", "smile", "fun", "art", "nature", "sky", "morning", "dinner", "new",
    "best", "good", "time", "day", "home", "work", "game", "team", "look",
];

/// Sales vocabulary. Appears in drug and innocent records alike.
pub const SALES: &[&str] = &[
    "dm",
    "for",
    "sale",
    "delivery",
    "available",
    "hmu",
    "prices",
    "order",
    "plug",
    "ship",
    "menu",
    "discreet",
    "fast",
    "cheap",
];

pub const TAG_SUFFIXES: &[&str] = &["", "4sale", "plug", "life", "delivery", "daily"];
