//! Transformer building blocks on top of [`Graph`].

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

/// Projections of one self-attention layer. Weights are `[d, d]`, biases `[d]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// One row-stochastic `[L, L]` matrix per head.
    pub attention: Vec<Var>,
}

/// `x·w + b`
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Scaled dot-product self-attention over `x: [L, d]` with `heads` heads of
/// width `d / heads`; head outputs are concatenated and projected by `wo`.
pub fn multihead_attention(
    g: &mut Graph,
    x: Var,
    p: &AttentionParams,
    heads: usize,
) -> Result<AttentionOutput> {
    let d = g.value(x).last_dim();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "embedding dim {d} is not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(g, x, p.wq, p.bq)?;
    let k = linear(g, x, p.wk, p.bk)?;
    let v = linear(g, x, p.wv, p.bv)?;

    let mut outs = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let a = g.softmax(scores, 1)?;
        outs.push(g.matmul(a, vh)?);
        attention.push(a);
    }
    let merged = if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    let output = linear(g, merged, p.wo, p.bo)?;
    Ok(AttentionOutput { output, attention })
}
