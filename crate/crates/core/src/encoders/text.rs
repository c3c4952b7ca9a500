use super::block::block;
use super::state::ModelVars;
use super::TextEncoderConfig;
use crate::error::{dim_err, Result};
use crate::numerics::{Graph, Var};
use crate::tokenizer::TokenSequence;

/// Causal key mask over the first `len` positions that also hides padding.
fn causal_mask(seq: &TokenSequence, len: usize) -> Vec<bool> {
    let mut allowed = vec![false; len * len];
    for i in 0..len {
        for j in 0..=i {
            allowed[i * len + j] = !seq.is_pad(j);
        }
    }
    allowed
}

/// `Embed_t`: token + learned position embeddings through `depth` causal
/// blocks, `[L×d]`.
pub fn encode_text(
    g: &mut Graph,
    vars: &ModelVars,
    cfg: &TextEncoderConfig,
    seq: &TokenSequence,
) -> Result<Var> {
    encode_text_prefix(g, vars, cfg, seq, cfg.context_len)
}

/// The first `len` rows of [`encode_text`]. Causal masking makes these rows
/// independent of later positions, so the result matches the full pass bit
/// for bit.
pub fn encode_text_prefix(
    g: &mut Graph,
    vars: &ModelVars,
    cfg: &TextEncoderConfig,
    seq: &TokenSequence,
    len: usize,
) -> Result<Var> {
    if seq.len() != cfg.context_len {
        return dim_err(format!(
            "token sequence has length {}, encoder expects {}",
            seq.len(),
            cfg.context_len
        ));
    }
    if len == 0 || len > seq.len() {
        return dim_err(format!("prefix length {len} outside 1..={}", seq.len()));
    }
    let tokens = g.embedding(vars.text.table, &seq.ids[..len])?;
    let pos = g.slice_rows(vars.text.position, 0, len)?;
    let mut x = g.add(tokens, pos)?;
    let mask = causal_mask(seq, len);
    for b in &vars.text.blocks {
        x = block(g, b, x, cfg.n_heads, Some(&mask))?;
    }
    Ok(x)
}

/// `G_t`: the row of `Embed_t` at the terminal token.
pub fn terminal_row(g: &mut Graph, embed_t: Var, seq: &TokenSequence) -> Result<Var> {
    g.row(embed_t, seq.terminal_pos)
}

/// `G_t` computed from only the positions up to the terminal token.
pub fn text_global(
    g: &mut Graph,
    vars: &ModelVars,
    cfg: &TextEncoderConfig,
    seq: &TokenSequence,
) -> Result<Var> {
    let prefix = encode_text_prefix(g, vars, cfg, seq, seq.terminal_pos + 1)?;
    terminal_row(g, prefix, seq)
}
