//! Multi-head scaled dot-product attention, composed from tape primitives so
//! its gradient needs no dedicated backward pass.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{real, Real, Tape, Var};

/// Projection parameters of one attention block, as tape variables.
/// Each pair is `(weight [d, d], bias [d])`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub q: (Var, Var),
    pub k: (Var, Var),
    pub v: (Var, Var),
    pub out: (Var, Var),
}

/// Standard scaled dot-product attention with `heads` heads over `x: [B, L, d]`,
/// scale `1/sqrt(d/heads)`, no masking. `attn_dropout` optionally zeroes
/// attention weights in train mode.
pub fn multi_head_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    params: &AttentionVars,
    heads: usize,
    attn_dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Validation(format!(
            "attention expects [B, L, d] input, got {:?}",
            shape
        )));
    }
    let (b, l, d) = (shape[0], shape[1], shape[2]);
    if d % heads != 0 {
        return Err(Error::Config(format!(
            "model dim {} not divisible by {} heads",
            d, heads
        )));
    }
    let dh = d / heads;

    let split = |tape: &mut Tape<T>, y: Var| -> Result<Var> {
        // [B, L, d] -> [B*heads, L, dh]
        let y = tape.reshape(y, &[b, l, heads, dh])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        tape.reshape(y, &[b * heads, l, dh])
    };

    let q = tape.linear(x, params.q.0, params.q.1)?;
    let k = tape.linear(x, params.k.0, params.k.1)?;
    let v = tape.linear(x, params.v.0, params.v.1)?;
    let (q, k, v) = (split(tape, q)?, split(tape, k)?, split(tape, v)?);

    let mut weights = tape.attention_weights(q, k, real::<T>(1.0 / (dh as f64).sqrt()))?;
    if let Some((rate, rng)) = attn_dropout {
        weights = tape.dropout(weights, rate, rng)?;
    }
    let ctx = tape.bmm_nn(weights, v)?;

    // [B*heads, L, dh] -> [B, L, d]
    let ctx = tape.reshape(ctx, &[b, heads, l, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, l, d])?;
    tape.linear(ctx, params.out.0, params.out.1)
}
