//! Scalar functions for finite-difference checks, one per differentiable
//! piece of the model.

use ipiqa::encoders::{
    encode_image, text_global, BranchVars, FusionVars, HeadVars, ModelVars,
};
use ipiqa::fusion::{attention_pool, fuse_and_score, Branch};
use ipiqa::losses_metrics::{image2prompt_loss, regression_loss};
use ipiqa::numerics::{grad_check, GradCheckReport, Graph, Tensor, Var, LAYER_NORM_EPS};
use ipiqa::tokenizer::Terminal;
use ipiqa::Result;

use super::{model_instance, random_image, random_sequence, rng, tiny_config};

pub const EPS: f64 = 1e-5;

pub const CASES: [&str; 8] = [
    "softmax_rows",
    "layer_norm",
    "attention_pool(visual)",
    "attention_pool(cross)",
    "fuse_and_score",
    "image2prompt_loss",
    "regression_loss",
    "full tiny model",
];

/// `Σ out ⊙ c` for a fixed random `c`, so no direction of `out` is free.
fn weighted_sum(g: &mut Graph, out: Var, c: &Tensor) -> Result<Var> {
    let c = g.constant(c.reshaped(g.shape(out).to_vec())?);
    let prod = g.mul(out, c)?;
    g.sum(prod)
}

fn branch(v: &[Var]) -> BranchVars {
    BranchVars {
        wq: v[0],
        wk: v[1],
        wv: v[2],
        wo: v[3],
    }
}

fn fusion_inputs(d: usize, p: usize, r: &mut rand_chacha::ChaCha8Rng) -> Vec<Tensor> {
    let s = 1.0 / (d as f64).sqrt();
    let mut t = vec![
        Tensor::randn(&[p, d], 1.0, r), // embed_v
        Tensor::randn(&[d], 1.0, r),    // query / G_t
        Tensor::randn(&[p, d], 0.5, r), // pos
    ];
    for _ in 0..8 {
        t.push(Tensor::randn(&[d, d], s, r));
    }
    t
}

fn fusion_vars(v: &[Var], heads: usize) -> FusionVars {
    FusionVars {
        pos: v[2],
        visual: branch(&v[3..7]),
        cross: branch(&v[7..11]),
        n_heads: heads,
    }
}

pub fn run(case: &str, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (d, p, heads) = (8, 4, 2);
    match case {
        "softmax_rows" => {
            let x = Tensor::randn(&[3, 5], 1.5, &mut r);
            let c = Tensor::randn(&[15], 1.0, &mut r);
            grad_check(
                |g, v| {
                    let s = g.softmax_rows(v[0])?;
                    weighted_sum(g, s, &c)
                },
                &[x],
                EPS,
            )
        }
        "layer_norm" => {
            let x = Tensor::randn(&[3, 6], 1.0, &mut r);
            let gain = Tensor::randn(&[6], 1.0, &mut r);
            let bias = Tensor::randn(&[6], 1.0, &mut r);
            let c = Tensor::randn(&[18], 1.0, &mut r);
            grad_check(
                |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)?;
                    weighted_sum(g, y, &c)
                },
                &[x, gain, bias],
                EPS,
            )
        }
        "attention_pool(visual)" | "attention_pool(cross)" => {
            let br = if case.contains("visual") { Branch::Visual } else { Branch::Cross };
            let inputs = fusion_inputs(d, p, &mut r);
            let c = Tensor::randn(&[d], 1.0, &mut r);
            grad_check(
                |g, v| {
                    let f = fusion_vars(v, heads);
                    let out = attention_pool(g, &f, br, v[0], v[1])?;
                    weighted_sum(g, out, &c)
                },
                &inputs,
                EPS,
            )
        }
        "fuse_and_score" => {
            let mut inputs = fusion_inputs(d, p, &mut r);
            inputs.push(Tensor::randn(&[2 * d, 2], 1.0 / (2.0 * d as f64).sqrt(), &mut r));
            inputs.push(Tensor::randn(&[2], 1.0, &mut r));
            let target = Tensor::randn(&[2], 1.0, &mut r);
            grad_check(
                |g, v| {
                    let f = fusion_vars(v, heads);
                    let h = HeadVars { weight: v[11], bias: v[12] };
                    let s = fuse_and_score(g, &f, &h, v[0], v[1])?;
                    let t = g.constant(target.clone());
                    regression_loss(g, s, t)
                },
                &inputs,
                EPS,
            )
        }
        "image2prompt_loss" => {
            let a = Tensor::randn(&[8], 1.0, &mut r);
            let b = Tensor::randn(&[8], 1.0, &mut r);
            grad_check(|g, v| image2prompt_loss(g, v[0], v[1]), &[a, b], EPS)
        }
        "regression_loss" => {
            let a = Tensor::randn(&[2], 1.0, &mut r);
            let b = Tensor::randn(&[2], 1.0, &mut r);
            grad_check(|g, v| regression_loss(g, v[0], v[1]), &[a, b], EPS)
        }
        "full tiny model" => {
            let cfg = tiny_config(d, 2, heads, 6, 1);
            let state = model_instance(&cfg, seed);
            let image = random_image(&cfg.image, &mut r);
            let seq = random_sequence(&cfg.text, Terminal::Qa, &mut r);
            let target = Tensor::randn(&[2], 1.0, &mut r);
            let names = state.param_names();
            grad_check(
                |g, v| {
                    let m = ModelVars::from_named(g, &cfg, &names, v)?;
                    let ev = encode_image(g, &m, &cfg.image, &image)?;
                    let gt = text_global(g, &m, &cfg.text, &seq)?;
                    let s = fuse_and_score(g, &m.fusion, &m.head, ev, gt)?;
                    let t = g.constant(target.clone());
                    regression_loss(g, s, t)
                },
                &state.param_tensors(),
                EPS,
            )
        }
        other => panic!("unknown gradient case {other}"),
    }
}
