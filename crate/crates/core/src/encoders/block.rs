use super::state::BlockVars;
use crate::attention::multi_head;
use crate::error::Result;
use crate::numerics::{Graph, Var, LAYER_NORM_EPS};

/// Pre-norm residual block: `x + attn(ln1(x))`, then `+ mlp(ln2(·))` with a
/// tanh hidden layer.
pub(crate) fn block(
    g: &mut Graph,
    b: &BlockVars,
    x: Var,
    n_heads: usize,
    allowed: Option<&[bool]>,
) -> Result<Var> {
    let h = g.layer_norm(x, b.ln1_gain, b.ln1_bias, LAYER_NORM_EPS)?;
    let q = g.matmul_nt(h, b.wq)?;
    let k = g.matmul_nt(h, b.wk)?;
    let v = g.matmul_nt(h, b.wv)?;
    let (heads, _) = multi_head(g, q, k, v, n_heads, allowed)?;
    let attn = g.matmul_nt(heads, b.wo)?;
    let attn = g.add_row(attn, b.bo)?;
    let x = g.add(x, attn)?;

    let h = g.layer_norm(x, b.ln2_gain, b.ln2_bias, LAYER_NORM_EPS)?;
    let hidden = g.matmul_nt(h, b.w1)?;
    let hidden = g.add_row(hidden, b.b1)?;
    let hidden = g.tanh(hidden)?;
    let m = g.matmul_nt(hidden, b.w2)?;
    let m = g.add_row(m, b.b2)?;
    g.add(x, m)
}
