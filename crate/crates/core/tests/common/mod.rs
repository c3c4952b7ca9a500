//! Naive reference implementations and fixtures shared by the integration
//! tests. Everything here works on plain nested `Vec`s so it shares no code
//! path with the tape.
#![allow(dead_code)]

use ipiqa::encoders::{
    ImageEncoderConfig, ModelConfig, ModelState, TextEncoderConfig, FUSION, HEAD, IMAGE_ENCODER,
    QA_EMBEDDING, TEXT_ENCODER,
};
use ipiqa::data::{gen_synthetic, ImagePromptPair, ScoreMode, SyntheticConfig};
use ipiqa::numerics::Tensor;
use ipiqa::pipelines::Model;
use ipiqa::tokenizer::{Terminal, TokenSequence, PAD, QA, SOT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod contract_suite;
pub mod grad_cases;
pub mod oracle_suite;

pub type M = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Model with `p = grid²` patches of a 2-channel image cut into 2×2 patches.
pub fn tiny_config(d: usize, grid: usize, heads: usize, context_len: usize, depth: usize) -> ModelConfig {
    ModelConfig {
        image: ImageEncoderConfig {
            in_channels: 2,
            image_side: 2 * grid,
            patch_side: 2,
            d,
            depth,
            n_heads: heads,
            mlp_ratio: 2,
        },
        text: TextEncoderConfig {
            vocab_size: 10,
            context_len,
            d,
            depth,
            n_heads: heads,
            mlp_ratio: 2,
        },
        fusion_heads: heads,
        n_out: 2,
    }
}

/// Every parameter redrawn from `N(0, std²)`, LayerNorm gains around 1.
pub fn random_state(cfg: &ModelConfig, seed: u64, std: f64) -> ModelState {
    let mut state = ModelState::init(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x9e37_79b9);
    for full in state.param_names() {
        let (group, name) = full.split_once('.').unwrap();
        let t = state.param_mut(group, name).unwrap();
        let mut fresh = Tensor::randn(t.shape(), std, &mut r);
        if name.ends_with("gain") {
            fresh.data_mut().iter_mut().for_each(|v| *v += 1.0);
        }
        *t = fresh;
    }
    state
}

/// The seeded initialization plus noise on every parameter: `0.1/sqrt(fan_in)`
/// on weight matrices, `0.1` on vectors and embedding tables. Activations
/// stay O(1) and attention stays away from saturation.
pub fn model_instance(cfg: &ModelConfig, seed: u64) -> ModelState {
    let mut state = ModelState::init(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x51ed_270b);
    let k = 0.1;
    for full in state.param_names() {
        let (group, name) = full.split_once('.').unwrap();
        let t = state.param_mut(group, name).unwrap();
        let table = name.contains("embed") || group == QA_EMBEDDING;
        let std = match t.shape() {
            [rows, _] if group == HEAD => k / (*rows as f64).sqrt(),
            [_, cols] if !table => k / (*cols as f64).sqrt(),
            _ => k,
        };
        let noise = Tensor::randn(t.shape(), std, &mut r);
        t.data_mut().iter_mut().zip(noise.data()).for_each(|(a, b)| *a += b);
    }
    state
}

pub fn random_image(cfg: &ImageEncoderConfig, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(&[cfg.in_channels, cfg.image_side, cfg.image_side], 1.0, r)
}

/// `[sot] w.. terminal [pad]..` with a random terminal position.
pub fn random_sequence(cfg: &TextEncoderConfig, terminal: Terminal, r: &mut ChaCha8Rng) -> TokenSequence {
    let terminal_pos = r.random_range(1..cfg.context_len);
    let mut ids = vec![SOT];
    for _ in 1..terminal_pos {
        ids.push(r.random_range(5..cfg.vocab_size));
    }
    ids.push(terminal.id());
    ids.resize(cfg.context_len, PAD);
    TokenSequence {
        ids,
        terminal_pos,
        terminal,
    }
}

pub fn matrix(t: &Tensor) -> M {
    t.to_rows()
}

fn p<'a>(state: &'a ModelState, group: &str, name: &str) -> &'a Tensor {
    state.param(group, name).unwrap()
}

/// `x · Wᵀ` for `W: [out×in]`.
pub fn linear(x: &M, w: &Tensor) -> M {
    let (out, inn) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), inn);
            (0..out)
                .map(|o| (0..inn).map(|i| row[i] * w.at(&[o, i])).sum())
                .collect()
        })
        .collect()
}

pub fn add_bias(x: &M, b: &Tensor) -> M {
    x.iter()
        .map(|row| row.iter().zip(b.data()).map(|(a, c)| a + c).collect())
        .collect()
}

pub fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn layer_norm(x: &M, gain: &Tensor, bias: &Tensor) -> M {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let denom = (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / denom * gain.data()[j] + bias.data()[j])
                .collect()
        })
        .collect()
}

pub fn softmax(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits
        .iter()
        .zip(allowed)
        .map(|(l, &a)| if a { (l - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Per-head scaled dot-product attention, one query row at a time.
pub fn attention(q: &M, k: &M, v: &M, heads: usize, allowed: &dyn Fn(usize, usize) -> bool) -> M {
    let d = q[0].len();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let mut out = vec![0.0; d];
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                let logits: Vec<f64> = k
                    .iter()
                    .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() * scale)
                    .collect();
                let mask: Vec<bool> = (0..k.len()).map(|j| allowed(i, j)).collect();
                let w = softmax(&logits, &mask);
                for c in cols {
                    out[c] = w.iter().zip(v).map(|(wj, vj)| wj * vj[c]).sum();
                }
            }
            out
        })
        .collect()
}

fn block(state: &ModelState, group: &str, b: usize, x: &M, heads: usize, allowed: &dyn Fn(usize, usize) -> bool) -> M {
    let w = |s: &str| p(state, group, &format!("blocks.{b}.{s}"));
    let h = layer_norm(x, w("ln1.gain"), w("ln1.bias"));
    let att = attention(&linear(&h, w("attn.wq")), &linear(&h, w("attn.wk")), &linear(&h, w("attn.wv")), heads, allowed);
    let x = add(x, &add_bias(&linear(&att, w("attn.wo")), w("attn.bo")));
    let h = layer_norm(&x, w("ln2.gain"), w("ln2.bias"));
    let hidden: M = add_bias(&linear(&h, w("mlp.w1")), w("mlp.b1"))
        .into_iter()
        .map(|r| r.into_iter().map(f64::tanh).collect())
        .collect();
    add(&x, &add_bias(&linear(&hidden, w("mlp.w2")), w("mlp.b2")))
}

/// Patch rows: grid row-major, then channel, row, column within a patch.
pub fn patches(image: &Tensor, cfg: &ImageEncoderConfig) -> M {
    let s = cfg.patch_side;
    let grid = cfg.image_side / s;
    let mut out = Vec::new();
    for gy in 0..grid {
        for gx in 0..grid {
            let mut row = Vec::new();
            for c in 0..cfg.in_channels {
                for y in 0..s {
                    for x in 0..s {
                        row.push(image.at(&[c, gy * s + y, gx * s + x]));
                    }
                }
            }
            out.push(row);
        }
    }
    out
}

pub fn encode_image(state: &ModelState, cfg: &ImageEncoderConfig, image: &Tensor) -> M {
    let mut x = add_bias(
        &linear(&patches(image, cfg), p(state, IMAGE_ENCODER, "patch_embed.weight")),
        p(state, IMAGE_ENCODER, "patch_embed.bias"),
    );
    for b in 0..cfg.depth {
        x = block(state, IMAGE_ENCODER, b, &x, cfg.n_heads, &|_, _| true);
    }
    x
}

pub fn encode_text(state: &ModelState, cfg: &TextEncoderConfig, seq: &TokenSequence) -> M {
    let table = p(state, TEXT_ENCODER, "token_embedding");
    let qa = p(state, QA_EMBEDDING, "row");
    let pos = p(state, TEXT_ENCODER, "position_embedding");
    let mut x: M = seq
        .ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let row = if id == QA { qa.data() } else { table.row(id) };
            row.iter().zip(pos.row(i)).map(|(a, b)| a + b).collect()
        })
        .collect();
    let last = seq.terminal_pos;
    for b in 0..cfg.depth {
        x = block(state, TEXT_ENCODER, b, &x, cfg.n_heads, &|i, j| j <= i && j <= last);
    }
    x
}

pub fn mean_rows(x: &M) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x[0].len())
        .map(|c| x.iter().map(|r| r[c]).sum::<f64>() / n)
        .collect()
}

/// Single-query pool over `embed_v + pos` for branch `visual` or `cross`.
pub fn attention_pool(state: &ModelState, branch: &str, heads: usize, embed_v: &M, query: &[f64]) -> Vec<f64> {
    let w = |s: &str| p(state, FUSION, &format!("{branch}.{s}"));
    let kv = add(embed_v, &matrix(p(state, FUSION, "pos_embed")));
    let q = linear(&vec![query.to_vec()], w("wq"));
    let o = attention(&q, &linear(&kv, w("wk")), &linear(&kv, w("wv")), heads, &|_, _| true);
    linear(&o, w("wo")).remove(0)
}

pub fn fuse_and_score(state: &ModelState, heads: usize, embed_v: &M, g_t: &[f64]) -> Vec<f64> {
    let v = attention_pool(state, "visual", heads, embed_v, &mean_rows(embed_v));
    let x = attention_pool(state, "cross", heads, embed_v, g_t);
    let joint: Vec<f64> = v.into_iter().chain(x).collect();
    let w = p(state, HEAD, "weight");
    let b = p(state, HEAD, "bias");
    (0..w.shape()[1])
        .map(|o| joint.iter().enumerate().map(|(i, j)| j * w.at(&[i, o])).sum::<f64>() + b.data()[o])
        .collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flat(m: &M) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// 1-based average ranks by counting.
pub fn rank_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let tied = x.iter().filter(|&&u| u == v).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

/// Two-pass sample covariance formula, kept within `[-1, 1]`.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Tau-b from explicit pair signs.
pub fn kendall_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let sign = |v: f64| (v > 0.0) as i64 - (v < 0.0) as i64;
    let (mut s, mut nx, mut ny) = (0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in 0..i {
            let (a, b) = (sign(x[i] - x[j]), sign(y[i] - y[j]));
            s += a * b;
            nx += a.abs();
            ny += b.abs();
        }
    }
    (nx > 0 && ny > 0).then(|| (s as f64 / (nx as f64 * ny as f64).sqrt()).clamp(-1.0, 1.0))
}

/// All weak orderings of `n` items as rank vectors: every surjection onto
/// `0..k` for some `k`.
pub fn weak_orderings(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for code in 0..n.pow(n as u32) {
        let v: Vec<usize> = (0..n).map(|i| code / n.pow(i as u32) % n).collect();
        let k = v.iter().max().map_or(0, |m| m + 1);
        if (0..k).all(|r| v.contains(&r)) {
            out.push(v.into_iter().map(|r| r as f64).collect());
        }
    }
    out
}

/// Non-decreasing rank vectors of length `n` (one representative per joint
/// permutation class).
pub fn sorted_orderings(n: usize) -> Vec<Vec<f64>> {
    weak_orderings(n)
        .into_iter()
        .filter(|v| v.windows(2).all(|w| w[0] <= w[1]))
        .collect()
}

/// Synthetic pairs on 16-px images with a one-block, two-head model sized
/// for them.
pub fn small_synthetic(mode: ScoreMode, n: usize, seed: u64) -> (Model, Vec<ImagePromptPair>) {
    let mut sc = SyntheticConfig::new(mode, n, seed);
    sc.image_side = 16;
    let data = gen_synthetic(&sc).unwrap();
    let mut model = Model::default_for(&data, mode.n_out(), seed).unwrap();
    model.cfg.image.image_side = 16;
    model.cfg.image.depth = 1;
    model.cfg.text.depth = 1;
    model.cfg.fusion_heads = 2;
    model.state = ModelState::init(&model.cfg, seed).unwrap();
    (model, data)
}
