use crate::error::{dim_err, Result};
use crate::numerics::{Graph, Var};

/// `1 - cos(e_img, e_txt)`, in `[0, 2]`. Near-zero embeddings are refused.
pub fn image2prompt_loss(g: &mut Graph, e_img: Var, e_txt: Var) -> Result<Var> {
    let c = g.cosine(e_img, e_txt)?;
    let neg = g.scale(c, -1.0)?;
    g.shift(neg, 1.0)
}

/// Mean squared error over the score outputs.
pub fn regression_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return dim_err(format!(
            "prediction {:?} and target {:?} differ in shape",
            g.shape(pred),
            g.shape(target)
        ));
    }
    let n = g.value(pred).len() as f64;
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq)?;
    g.scale(total, 1.0 / n)
}
