use crate::error::{dim_err, Result};
use crate::numerics::{Graph, Var};

/// Scaled dot-product attention split over `n_heads` column slices.
///
/// `q: [m×d]`, `k, v: [n×d]`. Returns the concatenated head outputs `[m×d]`
/// and each head's `[m×n]` weight matrix. `allowed` is an optional row-major
/// `[m×n]` key mask shared by all heads.
pub(crate) fn multi_head(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
    allowed: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let d = g.shape(q)[1];
    if g.shape(k)[1] != d || g.shape(v) != g.shape(k) {
        return dim_err(format!(
            "attention shapes q {:?}, k {:?}, v {:?}",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        ));
    }
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return dim_err(format!("width {d} is not divisible into {n_heads} heads"));
    }
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out: Option<Var> = None;
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let logits = g.matmul_nt(qh, kh)?;
        let logits = g.scale(logits, scale)?;
        let w = match allowed {
            Some(mask) => g.softmax_rows_masked(logits, mask.to_vec())?,
            None => g.softmax_rows(logits)?,
        };
        let oh = g.matmul(w, vh)?;
        weights.push(w);
        out = Some(match out {
            None => oh,
            Some(prev) => g.concat(prev, oh, 1)?,
        });
    }
    Ok((out.expect("at least one head"), weights))
}
