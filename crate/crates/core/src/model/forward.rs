use super::{ModelConfig, ModelKind, MultimodalInput};
use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::tensor::{ModelParams, Tape, Tensor, Var};
use crate::text::{CLS_ID, SEP_ID};

fn param(tape: &Tape, name: &str) -> Result<Var> {
    tape.param_var(name)
}

fn affine(tape: &mut Tape, x: Var, weight: &str, bias: &str) -> Result<Var> {
    let w = param(tape, weight)?;
    let b = param(tape, bias)?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

fn layer_norm(tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
    let g = param(tape, &format!("{prefix}.gain"))?;
    let b = param(tape, &format!("{prefix}.bias"))?;
    let n = tape.layer_norm(x)?;
    let n = tape.mul(n, g)?;
    tape.add(n, b)
}

fn check_image(input: &MultimodalInput, config: &ModelConfig) -> Result<()> {
    if input.image.len() != config.d_img {
        return Err(Error::contract(format!(
            "image feature has length {}, expected d_img = {}",
            input.image.len(),
            config.d_img
        )));
    }
    Ok(())
}

fn image_row(tape: &mut Tape, image: &[f64]) -> Result<Var> {
    Ok(tape.constant(&Tensor::row(image.to_vec())?))
}

/// Records the affine image projection on the tape as `M` rows of width
/// `d_model`. `None` when `M = 0`.
fn image_tokens_on_tape(
    tape: &mut Tape,
    image: &[f64],
    config: &ModelConfig,
    m: usize,
) -> Result<Option<Var>> {
    if image.len() != config.d_img {
        return Err(Error::contract(format!(
            "image feature has length {}, expected d_img = {}",
            image.len(),
            config.d_img
        )));
    }
    if m == 0 {
        return Ok(None);
    }
    let x = image_row(tape, image)?;
    let flat = affine(tape, x, "img_proj.weight", "img_proj.bias")?;
    tape.reshape(flat, &[m, config.d_model]).map(Some)
}

fn attention(tape: &mut Tape, h: Var, mask: &[bool], prefix: &str, c: &ModelConfig) -> Result<Var> {
    let q = affine(tape, h, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
    let k = affine(tape, h, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
    let v = affine(tape, h, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
    let dh = c.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(c.n_heads);
    for head in 0..c.n_heads {
        let qh = tape.slice_cols(q, head * dh, dh)?;
        let kh = tape.slice_cols(k, head * dh, dh)?;
        let vh = tape.slice_cols(v, head * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let weights = tape.masked_softmax_rows(scores, Some(mask))?;
        heads.push(tape.matmul(weights, vh)?);
    }
    let joined = tape.concat_cols(&heads)?;
    affine(
        tape,
        joined,
        &format!("{prefix}.wo"),
        &format!("{prefix}.bo"),
    )
}

/// Runs the transformer over `[CLS] image [SEP] text` and returns the final
/// normalized [CLS] state as a `1 x d_model` row.
fn encode(
    tape: &mut Tape,
    input: &MultimodalInput,
    image_block: Option<Var>,
    c: &ModelConfig,
) -> Result<Var> {
    input.check()?;
    let len = input.len();
    if len > c.max_seq {
        return Err(Error::contract(format!(
            "sequence of {len} positions exceeds max_seq {}",
            c.max_seq
        )));
    }
    let tok_emb = param(tape, "tok_emb")?;
    let mut parts = vec![tape.embedding(tok_emb, &[CLS_ID as usize])?];
    if let Some(img) = image_block {
        parts.push(img);
    }
    parts.push(tape.embedding(tok_emb, &[SEP_ID as usize])?);
    if !input.text_ids.is_empty() {
        let ids: Vec<usize> = input.text_ids.iter().map(|&i| i as usize).collect();
        if let Some(bad) = ids.iter().find(|&&i| i >= c.vocab_size) {
            return Err(Error::contract(format!(
                "token id {bad} outside vocabulary of {}",
                c.vocab_size
            )));
        }
        parts.push(tape.embedding(tok_emb, &ids)?);
    }
    let mut x = tape.concat_rows(&parts)?;

    let pos_emb = param(tape, "pos_emb")?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.embedding(pos_emb, &positions)?;
    x = tape.add(x, pos)?;
    let seg_emb = param(tape, "seg_emb")?;
    let segs: Vec<usize> = input.segments.iter().map(|&s| s as usize).collect();
    let seg = tape.embedding(seg_emb, &segs)?;
    x = tape.add(x, seg)?;

    for l in 0..c.n_layers {
        let p = format!("layers.{l}");
        let h = layer_norm(tape, x, &format!("{p}.ln1"))?;
        let a = attention(tape, h, &input.mask, &format!("{p}.attn"), c)?;
        x = tape.add(x, a)?;
        let h = layer_norm(tape, x, &format!("{p}.ln2"))?;
        let f = affine(tape, h, &format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"))?;
        let f = tape.gelu(f)?;
        let f = affine(tape, f, &format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"))?;
        x = tape.add(x, f)?;
    }
    let x = layer_norm(tape, x, "final_ln")?;
    tape.select_rows(x, &[0])
}

/// Records the forward pass of `kind` and returns its `1 x (C+1)` logits.
/// Every parameter the model reads must already be bound on `tape`.
pub fn logits_on_tape(
    tape: &mut Tape,
    kind: ModelKind,
    input: &MultimodalInput,
    c: &ModelConfig,
) -> Result<Var> {
    match kind {
        ModelKind::Mmbt => {
            if input.image_tokens != c.image_tokens {
                return Err(Error::contract(format!(
                    "input carries {} image tokens, config expects {}",
                    input.image_tokens, c.image_tokens
                )));
            }
            let img = image_tokens_on_tape(tape, &input.image, c, c.image_tokens)?;
            let cls = encode(tape, input, img, c)?;
            affine(tape, cls, "head.weight", "head.bias")
        }
        ModelKind::TextOnly => {
            let cls = encode(tape, &text_view(input), None, c)?;
            affine(tape, cls, "head.weight", "head.bias")
        }
        ModelKind::ImageOnly => {
            check_image(input, c)?;
            let x = image_row(tape, &input.image)?;
            let h = affine(tape, x, "mlp.fc1.weight", "mlp.fc1.bias")?;
            let h = tape.gelu(h)?;
            affine(tape, h, "mlp.fc2.weight", "mlp.fc2.bias")
        }
        ModelKind::Concat => {
            check_image(input, c)?;
            let phi_t = encode(tape, &text_view(input), None, c)?;
            let x = image_row(tape, &input.image)?;
            let phi_x = affine(tape, x, "img_fc.weight", "img_fc.bias")?;
            let joined = tape.concat_cols(&[phi_x, phi_t])?;
            affine(tape, joined, "fusion_head.weight", "fusion_head.bias")
        }
        ModelKind::Fbc => {
            check_image(input, c)?;
            let phi_t = encode(tape, &text_view(input), None, c)?;
            let phi_x = image_row(tape, &input.image)?;
            let (u, v, p) = (
                param(tape, "fbc.u")?,
                param(tape, "fbc.v")?,
                param(tape, "fbc.p")?,
            );
            let z = fbc_on_tape(tape, phi_x, phi_t, u, v, p)?;
            affine(tape, z, "fusion_head.weight", "fusion_head.bias")
        }
    }
}

fn text_view(input: &MultimodalInput) -> MultimodalInput {
    if input.image_tokens == 0 {
        input.clone()
    } else {
        input.without_image_tokens()
    }
}

/// `z = ((phi_x U) ⊙ (phi_t V)) P`, a rank-`r` factorized bilinear form.
fn fbc_on_tape(tape: &mut Tape, phi_x: Var, phi_t: Var, u: Var, v: Var, p: Var) -> Result<Var> {
    let a = tape.matmul(phi_x, u)?;
    let b = tape.matmul(phi_t, v)?;
    let h = tape.mul(a, b)?;
    tape.matmul(h, p)
}

/// Factorized bilinear fusion of two feature rows. `u` is `dim(phi_x) x r`,
/// `v` is `dim(phi_t) x r` and `p` is `r x d_out`.
pub fn fbc_fuse(
    phi_x: &[f64],
    phi_t: &[f64],
    u: &Tensor,
    v: &Tensor,
    p: &Tensor,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(&Tensor::row(phi_x.to_vec())?);
    let t = tape.constant(&Tensor::row(phi_t.to_vec())?);
    let (u, v, p) = (tape.constant(u), tape.constant(v), tape.constant(p));
    let z = fbc_on_tape(&mut tape, x, t, u, v, p)?;
    Ok(tape.data(z).to_vec())
}

fn run(
    kind: ModelKind,
    input: &MultimodalInput,
    params: &ModelParams,
    c: &ModelConfig,
) -> Result<Vec<f64>> {
    c.validate()?;
    let mut tape = Tape::new();
    tape.bind(params);
    let logits = logits_on_tape(&mut tape, kind, input, c)?;
    Ok(tape.data(logits).to_vec())
}

/// The `M` projected image tokens, each of width `d_model`.
pub fn encode_image_tokens(
    image: &[f64],
    params: &ModelParams,
    c: &ModelConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    tape.bind(params);
    match image_tokens_on_tape(&mut tape, image, c, c.image_tokens)? {
        None => Ok(Vec::new()),
        Some(v) => Ok(tape
            .data(v)
            .chunks(c.d_model)
            .map(<[f64]>::to_vec)
            .collect()),
    }
}

/// Logits of the multimodal bitransformer.
pub fn mmbt_forward(
    input: &MultimodalInput,
    params: &ModelParams,
    c: &ModelConfig,
) -> Result<Vec<f64>> {
    run(ModelKind::Mmbt, input, params, c)
}

/// Logits of one of the comparison models.
pub fn baseline_forward(
    kind: ModelKind,
    input: &MultimodalInput,
    params: &ModelParams,
    c: &ModelConfig,
) -> Result<Vec<f64>> {
    if kind == ModelKind::Mmbt {
        return Err(Error::contract("mmbt is not a baseline kind"));
    }
    run(kind, input, params, c)
}

/// Logits of any model kind.
pub fn forward(
    kind: ModelKind,
    input: &MultimodalInput,
    params: &ModelParams,
    c: &ModelConfig,
) -> Result<Vec<f64>> {
    run(kind, input, params, c)
}

pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&z| crate::tensor::sigmoid(z)).collect()
}

/// Mean over examples of the per-label binary cross-entropy sum, with
/// probabilities clamped away from 0 and 1.
pub fn bce_loss(probs: &[Vec<f64>], targets: &[LabelVector]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} probability rows for {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let Some(first) = probs.first() else {
        return Err(Error::contract("bce_loss needs at least one example"));
    };
    let width = first.len();
    if width == 0 {
        return Err(Error::contract("bce_loss needs at least one label"));
    }
    let mut flat = Vec::with_capacity(probs.len() * width);
    let mut ys = Vec::with_capacity(probs.len() * width);
    for (p, y) in probs.iter().zip(targets) {
        if p.len() != width || y.width() != width {
            return Err(Error::contract(format!(
                "label width mismatch: probabilities {} vs targets {}",
                p.len(),
                y.width()
            )));
        }
        flat.extend_from_slice(p);
        ys.extend(y.as_f64());
    }
    let mut tape = Tape::new();
    let pv = tape.constant(&Tensor::matrix(probs.len(), width, flat)?);
    let loss = tape.bce(pv, &ys)?;
    Ok(tape.data(loss)[0])
}

/// Bit `c` is set iff `probs[c] >= tau`. The drug-free rule is not enforced.
pub fn predict_labels(probs: &[f64], tau: f64) -> LabelVector {
    LabelVector::new(probs.iter().map(|&p| p >= tau).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use proptest::prelude::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 24,
            vocab_size: 64,
            max_seq: 16,
            image_tokens: 2,
            d_img: 8,
            seed: 3,
            ..Default::default()
        }
    }

    fn input(c: &ModelConfig, ids: &[u32]) -> MultimodalInput {
        let image = (0..c.d_img).map(|i| (i as f64 * 0.37).sin()).collect();
        MultimodalInput::from_text_ids(ids.to_vec(), image, c.image_tokens)
    }

    #[test]
    fn output_width_is_label_width() {
        let c = tiny();
        let p = init_params(ModelKind::Mmbt, &c).unwrap();
        let z = mmbt_forward(&input(&c, &[5, 6, 7]), &p, &c).unwrap();
        assert_eq!(z.len(), 10);
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_parameters_give_half_probabilities() {
        let c = tiny();
        let p = init_params(ModelKind::Mmbt, &c).unwrap().zeroed();
        let z = mmbt_forward(&input(&c, &[5, 6]), &p, &c).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(probabilities(&z).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn image_tokens_shape_and_bias() {
        let c = ModelConfig {
            d_model: 16,
            n_heads: 2,
            d_img: 8,
            image_tokens: 2,
            ..tiny()
        };
        let mut p = init_params(ModelKind::Mmbt, &c).unwrap();
        let toks = encode_image_tokens(&[0.3; 8], &p, &c).unwrap();
        assert_eq!((toks.len(), toks[0].len()), (2, 16));
        let bias: Vec<f64> = (0..32).map(|i| i as f64).collect();
        *p.get_mut("img_proj.bias").unwrap() = Tensor::new(vec![32], bias.clone()).unwrap();
        let zero = encode_image_tokens(&[0.0; 8], &p, &c).unwrap();
        assert_eq!(zero.concat(), bias);
        assert!(encode_image_tokens(&[0.0; 7], &p, &c).is_err());
        let c0 = ModelConfig {
            image_tokens: 0,
            ..c
        };
        let p0 = init_params(ModelKind::Mmbt, &c0).unwrap();
        assert!(encode_image_tokens(&[0.0; 8], &p0, &c0).unwrap().is_empty());
    }

    #[test]
    fn padding_does_not_change_logits() {
        let c = tiny();
        let p = init_params(ModelKind::Mmbt, &c).unwrap();
        let x = input(&c, &[9, 10, 11]);
        let a = mmbt_forward(&x, &p, &c).unwrap();
        let b = mmbt_forward(&x.padded(5), &p, &c).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn too_long_sequence_rejected() {
        let c = tiny();
        let p = init_params(ModelKind::Mmbt, &c).unwrap();
        let x = input(&c, &[5; 13]);
        assert!(matches!(mmbt_forward(&x, &p, &c), Err(Error::Contract(_))));
        assert!(mmbt_forward(&input(&c, &[5; 12]), &p, &c).is_ok());
    }

    #[test]
    fn text_only_equals_mmbt_without_image_tokens() {
        let c = ModelConfig {
            image_tokens: 0,
            ..tiny()
        };
        let p = init_params(ModelKind::Mmbt, &c).unwrap();
        let x = input(&c, &[4, 8, 15, 16]);
        assert_eq!(
            mmbt_forward(&x, &p, &c).unwrap(),
            baseline_forward(ModelKind::TextOnly, &x, &p, &c).unwrap()
        );
    }

    #[test]
    fn image_only_ignores_text() {
        let c = tiny();
        let p = init_params(ModelKind::ImageOnly, &c).unwrap();
        let a = baseline_forward(ModelKind::ImageOnly, &input(&c, &[5]), &p, &c).unwrap();
        let b = baseline_forward(ModelKind::ImageOnly, &input(&c, &[9, 9, 9]), &p, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn baselines_run_and_mmbt_is_not_a_baseline() {
        let c = tiny();
        for kind in [ModelKind::TextOnly, ModelKind::Concat, ModelKind::Fbc] {
            let p = init_params(kind, &c).unwrap();
            assert_eq!(
                baseline_forward(kind, &input(&c, &[7]), &p, &c)
                    .unwrap()
                    .len(),
                10
            );
        }
        let p = init_params(ModelKind::Mmbt, &c).unwrap();
        assert!(baseline_forward(ModelKind::Mmbt, &input(&c, &[7]), &p, &c).is_err());
        let cp = init_params(ModelKind::Concat, &c).unwrap();
        assert_eq!(
            cp.get("fusion_head.weight").unwrap().shape()[0],
            2 * c.d_model
        );
    }

    #[test]
    fn rank_one_bilinear_fixture() {
        let ones = |r, c| Tensor::filled(&[r, c], 1.0);
        let z = fbc_fuse(
            &[1.0, 2.0],
            &[3.0, 4.0],
            &ones(2, 1),
            &ones(2, 1),
            &ones(1, 1),
        )
        .unwrap();
        assert_eq!(z, [21.0]);
    }

    #[test]
    fn loss_fixtures() {
        let half = vec![vec![0.5; 10]];
        let y = vec![LabelVector::from_drugs(10, [2]).unwrap()];
        let l = bce_loss(&half, &y).unwrap();
        assert!((l - 10.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let l = bce_loss(&[vec![0.9, 0.2]], &[LabelVector::new(vec![true, false])]).unwrap();
        assert!((l - 0.32850).abs() < 1e-5);
        assert!((l + (0.9f64.ln() + 0.8f64.ln())).abs() < 1e-15);
        let perfect = bce_loss(&[vec![1.0, 0.0]], &[LabelVector::new(vec![true, false])]).unwrap();
        assert!(perfect <= 2.0 * 2.0 * 1e-12);
        assert!(bce_loss(&[vec![0.5; 3]], &y).is_err());
    }

    #[test]
    fn threshold_ties_set_the_bit() {
        let v = predict_labels(&[0.6, 0.4, 0.5], 0.5);
        assert_eq!(v.bits(), &[true, false, true]);
        assert!(!predict_labels(&[0.1, 0.2], 0.5).bits().iter().any(|&b| b));
    }

    proptest! {
        #[test]
        fn prediction_is_monotone(
            probs in prop::collection::vec(0.0f64..1.0, 1..12),
            idx in 0usize..12,
            bump in 0.0f64..1.0,
            tau in 0.01f64..0.99,
        ) {
            let i = idx % probs.len();
            let before = predict_labels(&probs, tau);
            let mut raised = probs.clone();
            raised[i] = (raised[i] + bump).min(1.0);
            let after = predict_labels(&raised, tau);
            for (b, a) in before.bits().iter().zip(after.bits()) {
                prop_assert!(!b || *a);
            }
        }

        #[test]
        fn loss_is_permutation_invariant(
            rows in prop::collection::vec(
                (prop::collection::vec(0.001f64..0.999, 4), prop::collection::vec(any::<bool>(), 4)),
                1..16,
            ),
            rot in 0usize..16,
        ) {
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            let ys: Vec<LabelVector> = rows.iter().map(|r| LabelVector::new(r.1.clone())).collect();
            let a = bce_loss(&probs, &ys).unwrap();
            let k = rot % probs.len();
            let mut p2 = probs.clone();
            let mut y2 = ys.clone();
            p2.rotate_left(k);
            y2.rotate_left(k);
            p2.reverse();
            y2.reverse();
            let b = bce_loss(&p2, &y2).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
