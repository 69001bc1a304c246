//! Tape-based forward pass: stems, positional encoding, encoder, head.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    BnBuffers, EncoderLayerParams, ModelConfig, ParamSet, PosParams, Stem1dParams, Stem2dParams,
    BN_EPS, LN_EPS,
};
use crate::numerics::{multi_head_attention, real, AttentionVars, Real, Tape, Tensor, Var};

/// Train mode carries the dropout stream; eval is deterministic.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

/// Batch statistics observed by the two stem batch-norm layers during a
/// train-mode forward; the caller folds them into the running buffers.
#[derive(Debug, Clone)]
pub struct BnBatchStats<T: Real> {
    pub bn1: (Tensor<T>, Tensor<T>),
    pub bn2: (Tensor<T>, Tensor<T>),
}

pub struct ForwardOut<T: Real> {
    pub logits: Var,
    /// Present in train mode.
    pub bn_stats: Option<BnBatchStats<T>>,
}

/// Two `(1, 3)` convolutions with GELU, collapsing `C` channels to one:
/// `[B, C, F, T] -> [B, F, T]`.
pub fn stem2d_forward<T: Real>(
    tape: &mut Tape<T>,
    params: &Stem2dParams<Var>,
    x: Var,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] < 2 {
        return Err(Error::Validation(format!(
            "stem2d expects [B, C>1, F, T], got {:?}",
            shape
        )));
    }
    let y = tape.conv2d_1x3(x, params.conv1.weight, params.conv1.bias, 1)?;
    let y = tape.gelu(y);
    let y = tape.conv2d_1x3(y, params.conv2.weight, params.conv2.bias, 1)?;
    let y = tape.gelu(y);
    tape.reshape(y, &[shape[0], shape[2], shape[3]])
}

/// Two blocks of conv1d (kernel 3, pad 1) + batch norm + GELU + dropout,
/// mapping `[B, F, T] -> [B, d_model, T]`.
pub fn stem1d_forward<T: Real>(
    tape: &mut Tape<T>,
    params: &Stem1dParams<Var>,
    buffers: &BnBuffers<T>,
    x: Var,
    dropout: f64,
    mode: &mut Mode,
) -> Result<(Var, Option<BnBatchStats<T>>)> {
    let eps: T = real(BN_EPS);
    let y = tape.conv1d_temporal(x, params.conv1.weight, params.conv1.bias, 1)?;
    let (y, stats1) = match mode {
        Mode::Train { .. } => {
            let (y, s) = tape.batch_norm_1d_train(y, params.bn1.gamma, params.bn1.beta, eps)?;
            (y, Some(s))
        }
        Mode::Eval => (
            tape.batch_norm_1d_eval(
                y,
                params.bn1.gamma,
                params.bn1.beta,
                &buffers.bn1_mean,
                &buffers.bn1_var,
                eps,
            )?,
            None,
        ),
    };
    let y = tape.gelu(y);
    let y = match mode {
        Mode::Train { rng } => tape.dropout(y, dropout, &mut **rng)?,
        Mode::Eval => y,
    };
    let y = tape.conv1d_temporal(y, params.conv2.weight, params.conv2.bias, 1)?;
    let (y, stats2) = match mode {
        Mode::Train { .. } => {
            let (y, s) = tape.batch_norm_1d_train(y, params.bn2.gamma, params.bn2.beta, eps)?;
            (y, Some(s))
        }
        Mode::Eval => (
            tape.batch_norm_1d_eval(
                y,
                params.bn2.gamma,
                params.bn2.beta,
                &buffers.bn2_mean,
                &buffers.bn2_var,
                eps,
            )?,
            None,
        ),
    };
    let y = tape.gelu(y);
    let y = match mode {
        Mode::Train { rng } => tape.dropout(y, dropout, &mut **rng)?,
        Mode::Eval => y,
    };
    let stats = stats1.map(|s1| BnBatchStats {
        bn1: s1,
        bn2: stats2.unwrap(),
    });
    Ok((y, stats))
}

/// Adds the normalized-Gaussian positional mixture to a token sequence.
pub fn gaussian_positional_encoding<T: Real>(
    tape: &mut Tape<T>,
    pos: &PosParams<Var>,
    tokens: Var,
) -> Result<Var> {
    tape.gaussian_pe(tokens, pos.mu, pos.sigma, pos.embed)
}

/// Post-norm encoder stack over `[B, L, d]` tokens.
pub fn encoder_forward<T: Real>(
    tape: &mut Tape<T>,
    layers: &[EncoderLayerParams<Var>],
    tokens: Var,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<Var> {
    let eps: T = real(LN_EPS);
    let mut x = tokens;
    let drop_enc = cfg.encoder_dropout && cfg.dropout > 0.0;
    for layer in layers {
        let attn_vars = AttentionVars {
            q: (layer.attn.q.weight, layer.attn.q.bias),
            k: (layer.attn.k.weight, layer.attn.k.bias),
            v: (layer.attn.v.weight, layer.attn.v.bias),
            out: (layer.attn.out.weight, layer.attn.out.bias),
        };
        let attn = match mode {
            Mode::Train { rng } if drop_enc => multi_head_attention(
                tape,
                x,
                &attn_vars,
                cfg.heads,
                Some((cfg.dropout, &mut **rng)),
            )?,
            _ => multi_head_attention(tape, x, &attn_vars, cfg.heads, None)?,
        };
        let res = tape.add(x, attn)?;
        x = tape.layer_norm(res, layer.ln1.gamma, layer.ln1.beta, eps)?;

        let h = tape.linear(x, layer.ffn1.weight, layer.ffn1.bias)?;
        let h = tape.gelu(h);
        let mut h = tape.linear(h, layer.ffn2.weight, layer.ffn2.bias)?;
        if drop_enc {
            if let Mode::Train { rng } = mode {
                h = tape.dropout(h, cfg.dropout, &mut **rng)?;
            }
        }
        let res = tape.add(x, h)?;
        x = tape.layer_norm(res, layer.ln2.gamma, layer.ln2.beta, eps)?;
    }
    Ok(x)
}

/// Full forward: stems -> tokens -> class token + positional encoding ->
/// encoder -> class-token head. Input is `[B, C, F, T]`.
pub fn forward_on_tape<T: Real>(
    tape: &mut Tape<T>,
    params: &ParamSet<Var>,
    buffers: &BnBuffers<T>,
    x: Var,
    cfg: &ModelConfig,
    mode: &mut Mode,
) -> Result<ForwardOut<T>> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 4
        || shape[1] != cfg.in_channels
        || shape[2] != cfg.in_freq
        || shape[3] != cfg.seq_len
    {
        return Err(Error::Validation(format!(
            "input shape {:?} does not match config [B, {}, {}, {}]",
            shape, cfg.in_channels, cfg.in_freq, cfg.seq_len
        )));
    }
    let (b, t) = (shape[0], shape[3]);
    let y = if cfg.in_channels > 1 {
        let s2 = params.stem2d.as_ref().ok_or_else(|| {
            Error::Config("config has in_channels > 1 but no 2D stem parameters".into())
        })?;
        stem2d_forward(tape, s2, x)?
    } else {
        tape.reshape(x, &[b, cfg.in_freq, t])?
    };
    let (y, bn_stats) = stem1d_forward(tape, &params.stem1d, buffers, y, cfg.dropout, mode)?;
    // [B, d, T] -> [B, T, d] token sequence
    let tokens = tape.permute(y, &[0, 2, 1])?;
    let tokens = if cfg.pe_includes_cls {
        let with_cls = tape.prepend_token(tokens, params.class_token)?;
        gaussian_positional_encoding(tape, &params.pos, with_cls)?
    } else {
        let encoded = gaussian_positional_encoding(tape, &params.pos, tokens)?;
        tape.prepend_token(encoded, params.class_token)?
    };
    let encoded = encoder_forward(tape, &params.encoder, tokens, cfg, mode)?;
    let cls = tape.take_token0(encoded)?;
    let logits = tape.linear(cls, params.head.weight, params.head.bias)?;
    if !tape.value(logits).all_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(ForwardOut { logits, bn_stats })
}
