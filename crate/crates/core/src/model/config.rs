use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::NUM_DRUGS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Hidden width of the feed-forward sublayer and of the image-only MLP.
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Number of image tokens injected into the sequence.
    pub image_tokens: usize,
    pub d_img: usize,
    /// Drug categories; the head emits one more logit for the drug-free bit.
    pub num_drugs: usize,
    pub threshold: f64,
    /// Rank of the factorized bilinear fusion baseline.
    pub fbc_rank: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            d_ff: 64,
            vocab_size: 2000,
            max_seq: 64,
            image_tokens: 4,
            d_img: 16,
            num_drugs: NUM_DRUGS,
            threshold: 0.5,
            fbc_rank: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn label_width(&self) -> usize {
        self.num_drugs + 1
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::contract(format!("model config: {msg}")));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 || self.d_img == 0 || self.fbc_rank == 0 {
            return fail("d_ff, d_img and fbc_rank must be positive".into());
        }
        if self.vocab_size < crate::text::RESERVED.len() {
            return fail(format!(
                "vocab_size {} leaves no room for reserved tokens",
                self.vocab_size
            ));
        }
        if self.num_drugs == 0 {
            return fail("num_drugs must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.max_seq < self.image_tokens + 2 {
            return fail(format!(
                "max_seq {} cannot hold [CLS], {} image tokens and [SEP]",
                self.max_seq, self.image_tokens
            ));
        }
        Ok(())
    }

    /// The text budget left after [CLS], the image block and [SEP].
    pub fn max_text_tokens(&self, kind: ModelKind) -> usize {
        self.max_seq - 2 - self.image_tokens_for(kind)
    }

    pub fn image_tokens_for(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Mmbt => self.image_tokens,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mmbt,
    TextOnly,
    ImageOnly,
    Concat,
    Fbc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Mmbt,
        ModelKind::TextOnly,
        ModelKind::ImageOnly,
        ModelKind::Concat,
        ModelKind::Fbc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mmbt => "mmbt",
            ModelKind::TextOnly => "text_only",
            ModelKind::ImageOnly => "image_only",
            ModelKind::Concat => "concat",
            ModelKind::Fbc => "fbc",
        }
    }

    pub fn uses_text(self) -> bool {
        self != ModelKind::ImageOnly
    }

    pub fn uses_image(self) -> bool {
        self != ModelKind::TextOnly
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown model kind {s:?}")))
    }
}
