use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{init_params, logits_on_tape, ModelConfig, ModelKind, MultimodalInput};
use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::metrics::{self, MetricsReport};
use crate::record::SuspectIdte;
use crate::tensor::{AdamConfig, AdamState, Gradients, ModelParams, Tape};
use crate::text::{self, NormalizationRules, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub split_seed: u64,
    pub train_fraction: f64,
    /// Apply obfuscation normalization before tokenizing.
    pub normalize: bool,
    pub min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Mmbt,
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            split_seed: 0,
            train_fraction: 0.75,
            normalize: true,
            min_freq: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Held-out metrics; absent when the test split is empty.
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub kind: ModelKind,
    pub n_train: usize,
    pub n_test: usize,
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        self.epochs.last().and_then(|e| e.metrics.as_ref())
    }

    pub fn final_train_loss(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_train_loss, |e| e.train_loss)
    }
}

/// Seeded shuffle of `0..n` cut at `round(fraction * n)`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((fraction * n as f64).round() as usize).clamp(1.min(n), n);
    let test = idx.split_off(cut);
    (idx, test)
}

/// Parameters together with everything needed to turn a record into an
/// input: the vocabulary, the configuration and the normalization flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub normalize: bool,
    pub params: ModelParams,
    rules: Option<NormalizationRules>,
}

impl TrainedModel {
    pub fn new(
        kind: ModelKind,
        config: ModelConfig,
        vocab: Vocabulary,
        normalize: bool,
        params: ModelParams,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::contract(format!(
                "vocabulary has {} tokens, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let expected = super::param_shapes(kind, &config);
        if expected.len() != params.len()
            || expected
                .iter()
                .any(|(n, s)| params.get(n).map(|t| t.shape()) != Some(s.as_slice()))
        {
            return Err(Error::contract(format!(
                "parameters do not match a {kind} model with this config"
            )));
        }
        Ok(TrainedModel {
            kind,
            config,
            vocab,
            normalize,
            params,
            rules: normalize.then(NormalizationRules::default),
        })
    }

    pub fn input_for(&self, record: &SuspectIdte) -> Result<MultimodalInput> {
        let budget = self.config.max_text_tokens(self.kind) + 1;
        let tokens = text::tokenize(&record.text, &self.vocab, budget, self.rules.as_ref());
        if self.kind.uses_image() && record.image_features.len() != self.config.d_img {
            return Err(Error::Validation {
                id: record.id.to_string(),
                reason: format!(
                    "image feature length {} != d_img {}",
                    record.image_features.len(),
                    self.config.d_img
                ),
            });
        }
        MultimodalInput::new(
            &tokens,
            record.image_features.clone(),
            self.config.image_tokens_for(self.kind),
        )
    }

    pub fn logits(&self, input: &MultimodalInput) -> Result<Vec<f64>> {
        super::forward(self.kind, input, &self.params, &self.config)
    }

    pub fn predict_probs(&self, record: &SuspectIdte) -> Result<Vec<f64>> {
        Ok(super::probabilities(
            &self.logits(&self.input_for(record)?)?,
        ))
    }

    pub fn predict(&self, record: &SuspectIdte) -> Result<LabelVector> {
        Ok(super::predict_labels(
            &self.predict_probs(record)?,
            self.config.threshold,
        ))
    }

    /// Metrics over every record; all must be labeled.
    pub fn evaluate(&self, records: &[SuspectIdte]) -> Result<MetricsReport> {
        let width = self.config.label_width();
        let truths = records
            .iter()
            .map(|r| r.ground_truth(width).cloned())
            .collect::<Result<Vec<_>>>()?;
        let preds = records
            .par_iter()
            .map(|r| self.predict(r))
            .collect::<Result<Vec<_>>>()?;
        metrics::evaluate(&truths, &preds)
    }
}

fn example_loss_grad(
    params: &ModelParams,
    kind: ModelKind,
    input: &MultimodalInput,
    target: &[f64],
    config: &ModelConfig,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    tape.bind(params);
    let logits = logits_on_tape(&mut tape, kind, input, config)?;
    let probs = tape.sigmoid(logits)?;
    let loss = tape.bce(probs, target)?;
    Ok((tape.data(loss)[0], tape.backward(loss)?))
}

fn example_loss(
    params: &ModelParams,
    kind: ModelKind,
    input: &MultimodalInput,
    target: &[f64],
    config: &ModelConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    tape.bind(params);
    let logits = logits_on_tape(&mut tape, kind, input, config)?;
    let probs = tape.sigmoid(logits)?;
    let loss = tape.bce(probs, target)?;
    Ok(tape.data(loss)[0])
}

/// Mini-batch Adam on the BCE loss over a seeded train split, reporting
/// held-out metrics after every epoch.
///
/// Per-example gradients are computed in parallel and summed in batch order,
/// so results do not depend on the thread count.
pub fn train(
    dataset: &[SuspectIdte],
    config: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(TrainedModel, TrainingHistory)> {
    if dataset.is_empty() {
        return Err(Error::contract("training needs at least one record"));
    }
    if tc.epochs == 0 || tc.batch_size == 0 {
        return Err(Error::contract("epochs and batch_size must be positive"));
    }
    if !(tc.train_fraction > 0.0 && tc.train_fraction <= 1.0) {
        return Err(Error::contract("train_fraction must lie in (0, 1]"));
    }
    config.validate()?;
    let width = config.label_width();
    let targets = dataset
        .iter()
        .map(|r| r.ground_truth(width).map(LabelVector::as_f64))
        .collect::<Result<Vec<_>>>()?;

    let (train_idx, test_idx) = split_indices(dataset.len(), tc.train_fraction, tc.split_seed);

    let rules = tc.normalize.then(NormalizationRules::default);
    let train_texts: Vec<String> = train_idx
        .iter()
        .map(|&i| match &rules {
            Some(r) => text::normalize_obfuscation(&dataset[i].text, r),
            None => dataset[i].text.clone(),
        })
        .collect();
    let max_words = config.vocab_size - text::RESERVED.len();
    let vocab = if max_words == 0 {
        Vocabulary::from_tokens(text::RESERVED.iter().map(|s| s.to_string()).collect())?
    } else {
        text::build_vocab(&train_texts, tc.min_freq, max_words)?
    };
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..config.clone()
    };

    let params = init_params(tc.kind, &config)?;
    let mut model = TrainedModel::new(tc.kind, config.clone(), vocab, tc.normalize, params)?;
    let inputs = dataset
        .iter()
        .map(|r| model.input_for(r))
        .collect::<Result<Vec<_>>>()?;

    let mean_loss = |params: &ModelParams, idx: &[usize]| -> Result<f64> {
        let losses = idx
            .par_iter()
            .map(|&i| example_loss(params, tc.kind, &inputs[i], &targets[i], &config))
            .collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / idx.len() as f64)
    };
    let test_records: Vec<SuspectIdte> = test_idx.iter().map(|&i| dataset[i].clone()).collect();

    let initial_train_loss = mean_loss(&model.params, &train_idx)?;
    let mut state = AdamState::new(&model.params, tc.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.split_seed ^ 0x05ee_d0fb_a7c4);
    let mut order = train_idx.clone();
    let mut epochs = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    example_loss_grad(&model.params, tc.kind, &inputs[i], &targets[i], &config)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Gradients::new();
            for (loss, g) in &results {
                loss_sum += loss;
                grads.accumulate(g)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            state.update(&mut model.params, &grads)?;
        }
        let metrics = if test_records.is_empty() {
            None
        } else {
            Some(model.evaluate(&test_records)?)
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            metrics,
        });
    }

    let history = TrainingHistory {
        kind: tc.kind,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        initial_train_loss,
        epochs,
    };
    Ok((model, history))
}

/// Mean BCE of `model` over `records`.
pub fn mean_loss(model: &TrainedModel, records: &[SuspectIdte]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::contract("mean_loss needs at least one record"));
    }
    let width = model.config.label_width();
    let losses = records
        .par_iter()
        .map(|r| {
            let y = r.ground_truth(width)?.as_f64();
            example_loss(
                &model.params,
                model.kind,
                &model.input_for(r)?,
                &y,
                &model.config,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::RecordKind;

    fn rec(id: u64, text: &str, image: Vec<f64>, drugs: &[usize]) -> SuspectIdte {
        SuspectIdte {
            id,
            kind: RecordKind::Post,
            parent_id: None,
            author_id: 0,
            text: text.into(),
            hashtags: vec![],
            image_features: image,
            labels: Some(LabelVector::from_drugs(10, drugs.iter().copied()).unwrap()),
        }
    }

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 8,
            vocab_size: 50,
            max_seq: 12,
            image_tokens: 1,
            d_img: 2,
            ..Default::default()
        }
    }

    fn data() -> Vec<SuspectIdte> {
        (0..12)
            .map(|i| {
                if i % 2 == 0 {
                    rec(i, "kush for sale", vec![1.0, 0.0], &[1])
                } else {
                    rec(i, "nice sunset today", vec![0.0, 1.0], &[])
                }
            })
            .collect()
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a, b) = split_indices(100, 0.75, 4);
        assert_eq!((a.len(), b.len()), (75, 25));
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.75, 4), (a, b));
        assert_ne!(split_indices(100, 0.75, 5).0, split_indices(100, 0.75, 4).0);
    }

    #[test]
    fn unlabeled_record_named_in_error() {
        let mut d = data();
        d[3].labels = None;
        let err = train(&d, &small(), &TrainConfig::default()).unwrap_err();
        assert!(
            matches!(err, Error::Validation { ref id, .. } if id == "3"),
            "{err}"
        );
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let tc = TrainConfig {
            epochs: 15,
            batch_size: 4,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let (m1, h1) = train(&data(), &small(), &tc).unwrap();
        let (m2, h2) = train(&data(), &small(), &tc).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(h1, h2);
        assert_eq!(h1.epochs.len(), 15);
        assert!(h1.final_train_loss() < h1.initial_train_loss / 2.0);
        assert_eq!((h1.n_train, h1.n_test), (9, 3));
        let report = h1.final_metrics().unwrap();
        assert_eq!(report.n_examples, 3);
    }

    #[test]
    fn every_kind_trains() {
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 5,
            ..Default::default()
        };
        for kind in ModelKind::ALL {
            let (m, h) = train(&data(), &small(), &TrainConfig { kind, ..tc.clone() }).unwrap();
            assert_eq!(m.kind, kind);
            assert!(h.epochs[0].train_loss.is_finite());
        }
    }
}
