use super::block::block;
use super::state::ModelVars;
use super::ImageEncoderConfig;
use crate::error::{dim_err, Result};
use crate::fusion::{attention_pool, Branch};
use crate::numerics::{Graph, Tensor, Var};

/// Rearranges a `[C×H×W]` image into `[p×(C·s·s)]` patch rows. Patches are
/// ordered row-major over the grid; each row is channel-major, then
/// row-major within the patch.
pub fn patchify(image: &Tensor, cfg: &ImageEncoderConfig) -> Result<Tensor> {
    let want = [cfg.in_channels, cfg.image_side, cfg.image_side];
    if image.shape() != want {
        return dim_err(format!(
            "image shape {:?} does not match encoder input {want:?}",
            image.shape()
        ));
    }
    let (s, side, grid) = (cfg.patch_side, cfg.image_side, cfg.grid_side());
    let px = image.data();
    let mut out = Vec::with_capacity(image.len());
    for gy in 0..grid {
        for gx in 0..grid {
            for c in 0..cfg.in_channels {
                for dy in 0..s {
                    let row = (c * side + gy * s + dy) * side + gx * s;
                    out.extend_from_slice(&px[row..row + s]);
                }
            }
        }
    }
    Tensor::matrix(grid * grid, cfg.patch_dim(), out)
}

/// `Embed_v`: patch embedding followed by `depth` self-attention blocks, `[p×d]`.
pub fn encode_image(
    g: &mut Graph,
    vars: &ModelVars,
    cfg: &ImageEncoderConfig,
    image: &Tensor,
) -> Result<Var> {
    let patches = g.constant(patchify(image, cfg)?);
    let x = g.matmul_nt(patches, vars.image.patch_w)?;
    let mut x = g.add_row(x, vars.image.patch_b)?;
    for b in &vars.image.blocks {
        x = block(g, b, x, cfg.n_heads, None)?;
    }
    Ok(x)
}

/// Global image embedding: the visual attention pool (queried by the mean
/// patch) projected into the joint space, `[d]`.
pub fn image_global(g: &mut Graph, vars: &ModelVars, embed_v: Var) -> Result<Var> {
    let gap = g.mean_rows(embed_v)?;
    let pooled = attention_pool(g, &vars.fusion, Branch::Visual, embed_v, gap)?;
    let d = g.shape(pooled)[0];
    let row = g.reshape(pooled, &[1, d])?;
    let projected = g.matmul_nt(row, vars.image.proj)?;
    g.reshape(projected, &[d])
}
