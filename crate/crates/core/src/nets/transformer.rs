use std::rc::Rc;

use super::{Bound, Dropout, ModelConfig};
use crate::autodiff::{Tape, Tensor, Var, MASK_FILL};
use crate::error::{Error, Result};

/// Fixed sinusoidal table, `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((i - i % 2) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("len*d entries")
}

pub struct EncoderOutput {
    /// `[batch, len, d_model]`, after the final layer norm.
    pub output: Var,
    /// Per layer, `[batch, heads, len, len]` attention weights.
    pub attention: Vec<Var>,
}

pub(crate) fn linear(tape: &mut Tape, x: Var, bound: &Bound, name: &str) -> Result<Var> {
    let y = tape.matmul(x, bound.get(&format!("{name}.weight"))?)?;
    tape.add(y, bound.get(&format!("{name}.bias"))?)
}

fn norm(tape: &mut Tape, x: Var, bound: &Bound, name: &str) -> Result<Var> {
    tape.layer_norm(
        x,
        bound.get(&format!("{name}.gain"))?,
        bound.get(&format!("{name}.bias"))?,
    )
}

/// Pre-norm encoder stack over right-padded `x` (`[batch, len, d_model]`).
/// Keys at or beyond each row's length are masked out of attention.
pub fn transformer_encode(
    tape: &mut Tape,
    x: Var,
    lengths: &[usize],
    bound: &Bound,
    config: &ModelConfig,
    mut dropout: Option<&mut Dropout>,
) -> Result<EncoderOutput> {
    let shape = tape.shape(x).to_vec();
    let (b, t, d) = match shape[..] {
        [b, t, d] if b == lengths.len() && d == config.d_model => (b, t, d),
        _ => {
            return Err(Error::Shape {
                op: "transformer_encode",
                lhs: shape,
                rhs: vec![lengths.len(), config.max_seq, config.d_model],
            })
        }
    };
    if let Some(row) = lengths.iter().position(|&l| l == 0) {
        return Err(Error::EmptySequence(row));
    }
    if lengths.iter().any(|&l| l > t) {
        return Err(Error::Config(format!(
            "sequence length exceeds padded length {t}"
        )));
    }
    let (h, dh) = (config.n_heads, config.head_dim());
    let mut mask = Vec::with_capacity(b * h * t * t);
    for &len in lengths {
        for _ in 0..h * t {
            mask.extend((0..t).map(|j| j >= len));
        }
    }
    let mask = Rc::new(mask);

    let mut x = x;
    let mut attention = Vec::with_capacity(config.n_layers);
    for layer in 0..config.n_layers {
        let p = format!("encoder.{layer}");
        let hx = norm(tape, x, bound, &format!("{p}.attn_norm"))?;
        let split = |tape: &mut Tape, name: &str, perm: &[usize]| -> Result<Var> {
            let y = if name == "k" {
                tape.matmul(hx, bound.get(&format!("{p}.attn.k.weight"))?)?
            } else {
                linear(tape, hx, bound, &format!("{p}.attn.{name}"))?
            };
            let y = tape.reshape(y, &[b, t, h, dh])?;
            tape.permute(y, perm)
        };
        let q = split(tape, "q", &[0, 2, 1, 3])?;
        let kt = split(tape, "k", &[0, 2, 3, 1])?;
        let v = split(tape, "v", &[0, 2, 1, 3])?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let scores = tape.masked_fill(scores, mask.clone(), MASK_FILL)?;
        let weights = tape.softmax(scores);
        attention.push(weights);
        let weights = match dropout.as_deref_mut() {
            Some(dr) => dr.apply(tape, weights)?,
            None => weights,
        };
        let ctx = tape.matmul(weights, v)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, t, d])?;
        let ctx = linear(tape, ctx, bound, &format!("{p}.attn.o"))?;
        x = tape.add(x, ctx)?;

        let hx = norm(tape, x, bound, &format!("{p}.ffn_norm"))?;
        let f = linear(tape, hx, bound, &format!("{p}.ffn.0"))?;
        let f = tape.relu(f);
        let f = match dropout.as_deref_mut() {
            Some(dr) => dr.apply(tape, f)?,
            None => f,
        };
        let f = linear(tape, f, bound, &format!("{p}.ffn.1"))?;
        x = tape.add(x, f)?;
    }
    let output = norm(tape, x, bound, "final_norm")?;
    Ok(EncoderOutput { output, attention })
}
