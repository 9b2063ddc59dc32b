//! The multimodal bitransformer, its comparison models, the BCE loss and
//! the training loop.
//!
//! Image features enter the MMBT as `M` tokens produced by an affine
//! projection and sit between `[CLS]` and `[SEP]`; text follows `[SEP]`.
//! Blocks are pre-norm with key-padding masks, and a linear head on the
//! final `[CLS]` state yields `C + 1` logits.
//!
//! Comparison models:
//! - `text_only`: the same encoder without image tokens;
//! - `image_only`: a two-layer perceptron on the image feature;
//! - `concat`: a head on `[phi_x ; phi_t]` with `phi_x` an affine image
//!   projection and `phi_t` the text `[CLS]` state;
//! - `fbc`: a head on `z = ((phi_x U) ⊙ (phi_t V)) P`, a low-rank bilinear
//!   form over the raw image feature and the text `[CLS]` state. This
//!   concrete form is our own stand-in for factorized bilinear coding.

mod bundle;
mod config;
mod forward;
mod input;
mod params;
mod train;

pub use bundle::{decode_model, encode_model, load_model, save_model, META_TENSOR};
pub use config::{ModelConfig, ModelKind};
pub use forward::{
    baseline_forward, bce_loss, encode_image_tokens, fbc_fuse, forward, logits_on_tape,
    mmbt_forward, predict_labels, probabilities,
};
pub use input::MultimodalInput;
pub use params::{init_params, param_shapes};
pub use train::{
    mean_loss, split_indices, train, EpochRecord, TrainConfig, TrainedModel, TrainingHistory,
};
