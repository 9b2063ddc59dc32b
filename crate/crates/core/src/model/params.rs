use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelKind};
use crate::error::Result;
use crate::tensor::{ModelParams, Tensor};

#[derive(Clone, Copy)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

fn layout(kind: ModelKind, c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let out = c.label_width();
    let mut s: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: &str, shape: &[usize], init: Init| {
        s.push((name.to_string(), shape.to_vec(), init));
    };

    if kind.uses_text() {
        push("tok_emb", &[c.vocab_size, d], Init::Glorot);
        push("pos_emb", &[c.max_seq, d], Init::Glorot);
        push("seg_emb", &[2, d], Init::Glorot);
        for l in 0..c.n_layers {
            let p = format!("layers.{l}");
            push(&format!("{p}.ln1.gain"), &[d], Init::Ones);
            push(&format!("{p}.ln1.bias"), &[d], Init::Zeros);
            for w in ["q", "k", "v", "o"] {
                push(&format!("{p}.attn.w{w}"), &[d, d], Init::Glorot);
                push(&format!("{p}.attn.b{w}"), &[d], Init::Zeros);
            }
            push(&format!("{p}.ln2.gain"), &[d], Init::Ones);
            push(&format!("{p}.ln2.bias"), &[d], Init::Zeros);
            push(&format!("{p}.ffn.w1"), &[d, c.d_ff], Init::Glorot);
            push(&format!("{p}.ffn.b1"), &[c.d_ff], Init::Zeros);
            push(&format!("{p}.ffn.w2"), &[c.d_ff, d], Init::Glorot);
            push(&format!("{p}.ffn.b2"), &[d], Init::Zeros);
        }
        push("final_ln.gain", &[d], Init::Ones);
        push("final_ln.bias", &[d], Init::Zeros);
    }

    match kind {
        ModelKind::Mmbt | ModelKind::TextOnly => {
            let m = c.image_tokens_for(kind);
            if m > 0 {
                push("img_proj.weight", &[c.d_img, m * d], Init::Glorot);
                push("img_proj.bias", &[m * d], Init::Zeros);
            }
            push("head.weight", &[d, out], Init::Glorot);
            push("head.bias", &[out], Init::Zeros);
        }
        ModelKind::ImageOnly => {
            push("mlp.fc1.weight", &[c.d_img, c.d_ff], Init::Glorot);
            push("mlp.fc1.bias", &[c.d_ff], Init::Zeros);
            push("mlp.fc2.weight", &[c.d_ff, out], Init::Glorot);
            push("mlp.fc2.bias", &[out], Init::Zeros);
        }
        ModelKind::Concat => {
            push("img_fc.weight", &[c.d_img, d], Init::Glorot);
            push("img_fc.bias", &[d], Init::Zeros);
            push("fusion_head.weight", &[2 * d, out], Init::Glorot);
            push("fusion_head.bias", &[out], Init::Zeros);
        }
        ModelKind::Fbc => {
            push("fbc.u", &[c.d_img, c.fbc_rank], Init::Glorot);
            push("fbc.v", &[d, c.fbc_rank], Init::Glorot);
            push("fbc.p", &[c.fbc_rank, d], Init::Glorot);
            push("fusion_head.weight", &[d, out], Init::Glorot);
            push("fusion_head.bias", &[out], Init::Zeros);
        }
    }
    s
}

/// Fresh parameters for `kind`: Glorot-uniform weights and embeddings,
/// zero biases, unit layer-norm gains. Deterministic in `config.seed`.
pub fn init_params(kind: ModelKind, config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::new();
    for (name, shape, init) in layout(kind, config) {
        let t = match init {
            Init::Glorot => Tensor::glorot(&shape, &mut rng),
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::filled(&shape, 1.0),
        };
        params.insert(name, t)?;
    }
    Ok(params)
}

/// Names and shapes `kind` expects, in initialization order.
pub fn param_shapes(kind: ModelKind, config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout(kind, config)
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect()
}
