//! Image-prompt fusion: two single-query attention pools over the patch grid
//! and a linear score head over their concatenation.
//!
//! The visual branch is queried by the mean patch embedding, the
//! cross-modality branch by the prompt's terminal-token embedding. Both
//! attend over `Embed_v + Embed_pos`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::multi_head;
use crate::encoders::{BranchVars, FusionVars, HeadVars};
use crate::error::{dim_err, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Visual,
    Cross,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Visual => "visual",
            Branch::Cross => "cross",
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Branch::Visual),
            "cross" => Ok(Branch::Cross),
            other => Err(crate::Error::Config(format!("unknown branch `{other}`"))),
        }
    }
}

fn branch_vars(f: &FusionVars, branch: Branch) -> &BranchVars {
    match branch {
        Branch::Visual => &f.visual,
        Branch::Cross => &f.cross,
    }
}

/// Pooled output `[d]` and each head's `[1×p]` weights.
pub fn attention_pool_with_weights(
    g: &mut Graph,
    fusion: &FusionVars,
    branch: Branch,
    embed_v: Var,
    query: Var,
) -> Result<(Var, Vec<Var>)> {
    let (p, d) = match g.shape(embed_v) {
        [p, d] => (*p, *d),
        s => return dim_err(format!("Embed_v must be [p×d], got {s:?}")),
    };
    if g.shape(fusion.pos) != [p, d] {
        return dim_err(format!(
            "positional embedding {:?} does not match patch grid {:?}",
            g.shape(fusion.pos),
            [p, d]
        ));
    }
    if g.shape(query) != [d] {
        return dim_err(format!("query {:?} does not match width {d}", g.shape(query)));
    }
    let w = branch_vars(fusion, branch);
    let kv_in = g.add(embed_v, fusion.pos)?;
    let k = g.matmul_nt(kv_in, w.wk)?;
    let v = g.matmul_nt(kv_in, w.wv)?;
    let q_row = g.reshape(query, &[1, d])?;
    let q = g.matmul_nt(q_row, w.wq)?;
    let (heads, weights) = multi_head(g, q, k, v, fusion.n_heads, None)?;
    let out = g.matmul_nt(heads, w.wo)?;
    let out = g.reshape(out, &[d])?;
    Ok((out, weights))
}

/// Single-query multi-head attention pool over the patch grid, `[d]`.
pub fn attention_pool(
    g: &mut Graph,
    fusion: &FusionVars,
    branch: Branch,
    embed_v: Var,
    query: Var,
) -> Result<Var> {
    attention_pool_with_weights(g, fusion, branch, embed_v, query).map(|(out, _)| out)
}

/// `[v ‖ x] · W + b` where `v` pools with the mean patch as query and `x`
/// pools with `G_t`.
pub fn fuse_and_score(
    g: &mut Graph,
    fusion: &FusionVars,
    head: &HeadVars,
    embed_v: Var,
    g_t: Var,
) -> Result<Var> {
    let gap = g.mean_rows(embed_v)?;
    let visual = attention_pool(g, fusion, Branch::Visual, embed_v, gap)?;
    let cross = attention_pool(g, fusion, Branch::Cross, embed_v, g_t)?;
    let joint = g.concat(visual, cross, 0)?;
    let width = g.shape(joint)[0];
    let joint = g.reshape(joint, &[1, width])?;
    let scores = g.matmul(joint, head.weight)?;
    let scores = g.add_row(scores, head.bias)?;
    let n_out = g.shape(scores)[1];
    g.reshape(scores, &[n_out])
}

/// Per-head softmax weights of a pool, `[n_heads×p]`; each row sums to one.
pub fn attention_maps(
    g: &mut Graph,
    fusion: &FusionVars,
    branch: Branch,
    embed_v: Var,
    query: Var,
) -> Result<Tensor> {
    let (_, weights) = attention_pool_with_weights(g, fusion, branch, embed_v, query)?;
    let p = g.shape(embed_v)[0];
    let data: Vec<f64> = weights.iter().flat_map(|&w| g.value(w).data().to_vec()).collect();
    Tensor::matrix(weights.len(), p, data)
}

/// One head per line, space-separated.
pub fn attention_maps_to_text(maps: &Tensor) -> String {
    let mut out = String::new();
    for row in maps.to_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", line.join(" ")).expect("writing to a String");
    }
    out
}

/// Binary (P5) 8-bit PGM of one head's weights laid out on the patch grid,
/// min-max scaled over that map. A constant map renders mid-gray.
pub fn head_to_pgm(weights: &[f64], grid_side: usize) -> Result<Vec<u8>> {
    if weights.len() != grid_side * grid_side {
        return dim_err(format!(
            "{} weights do not fill a {grid_side}x{grid_side} grid",
            weights.len()
        ));
    }
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{grid_side} {grid_side}\n255\n").into_bytes();
    for &w in weights {
        let level = if hi > lo {
            ((w - lo) / (hi - lo) * 255.0).round()
        } else {
            128.0
        };
        out.push(level.clamp(0.0, 255.0) as u8);
    }
    Ok(out)
}

/// Writes `attn_<branch>.txt` and `attn_<branch>_head<h>.pgm` files into `dir`.
pub fn export_attention_maps(
    dir: &Path,
    branch: Branch,
    maps: &Tensor,
    grid_side: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let txt = dir.join(format!("attn_{}.txt", branch.name()));
    std::fs::write(&txt, attention_maps_to_text(maps))?;
    written.push(txt);
    for (h, row) in maps.to_rows().iter().enumerate() {
        let path = dir.join(format!("attn_{}_head{h}.pgm", branch.name()));
        std::fs::write(&path, head_to_pgm(row, grid_side)?)?;
        written.push(path);
    }
    Ok(written)
}
