use crate::error::{Error, Result};
use crate::text::{TokenSequence, CLS_ID, PAD_ID};

/// One model input laid out as `[CLS] image tokens [SEP] text`.
///
/// `segments` and `mask` cover the whole sequence. Positions holding
/// `[PAD]` are masked out as attention keys.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalInput {
    pub text_ids: Vec<u32>,
    pub image: Vec<f64>,
    pub image_tokens: usize,
    pub segments: Vec<u8>,
    pub mask: Vec<bool>,
}

impl MultimodalInput {
    /// `tokens` is a tokenizer output, so its leading [CLS] is dropped and
    /// re-inserted at the head of the joint sequence.
    pub fn new(tokens: &TokenSequence, image: Vec<f64>, image_tokens: usize) -> Result<Self> {
        let text_ids = match tokens.ids.split_first() {
            Some((&CLS_ID, rest)) => rest.to_vec(),
            _ => return Err(Error::contract("token sequence must start with [CLS]")),
        };
        Ok(Self::from_text_ids(text_ids, image, image_tokens))
    }

    pub fn from_text_ids(text_ids: Vec<u32>, image: Vec<f64>, image_tokens: usize) -> Self {
        let len = 2 + image_tokens + text_ids.len();
        let segments = (0..len).map(|i| u8::from(i >= 2 + image_tokens)).collect();
        let mask = (0..len)
            .map(|i| i < 2 + image_tokens || text_ids[i - 2 - image_tokens] != PAD_ID)
            .collect();
        MultimodalInput {
            text_ids,
            image,
            image_tokens,
            segments,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// The same input with the image block removed.
    pub fn without_image_tokens(&self) -> Self {
        Self::from_text_ids(self.text_ids.clone(), self.image.clone(), 0)
    }

    /// Appends `n` [PAD] tokens to the text.
    pub fn padded(&self, n: usize) -> Self {
        let mut ids = self.text_ids.clone();
        ids.extend(std::iter::repeat_n(PAD_ID, n));
        Self::from_text_ids(ids, self.image.clone(), self.image_tokens)
    }

    pub(crate) fn check(&self) -> Result<()> {
        let len = 2 + self.image_tokens + self.text_ids.len();
        if self.segments.len() != len || self.mask.len() != len {
            return Err(Error::contract(format!(
                "segment ids ({}) and mask ({}) must cover the {len} sequence positions",
                self.segments.len(),
                self.mask.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let tokens = TokenSequence {
            ids: vec![CLS_ID, 7, 8],
            tokens: vec!["[CLS]".into(), "a".into(), "b".into()],
        };
        let x = MultimodalInput::new(&tokens, vec![0.0; 3], 2).unwrap();
        assert_eq!(x.len(), 1 + 2 + 1 + 2);
        assert_eq!(x.segments, [0, 0, 0, 0, 1, 1]);
        assert!(x.mask.iter().all(|&m| m));
        let p = x.padded(2);
        assert_eq!(p.mask, [true, true, true, true, true, true, false, false]);
        assert_eq!(x.without_image_tokens().segments, [0, 0, 1, 1]);
    }

    #[test]
    fn needs_leading_cls() {
        let tokens = TokenSequence {
            ids: vec![5],
            tokens: vec!["x".into()],
        };
        assert!(MultimodalInput::new(&tokens, vec![], 0).is_err());
    }
}
