//! Forward passes and metrics against independent naive implementations.

use super::*;
use ipiqa::encoders::{encode_image, encode_text, text_global, ModelState};
use ipiqa::fusion::{attention_pool, fuse_and_score, Branch};
use ipiqa::losses_metrics::{krcc, plcc, srcc, ScorePairSeries};
use ipiqa::numerics::{Graph, Tensor};
use ipiqa::tokenizer::Terminal;
use rand::Rng;

const CONFIGS: [(usize, usize, usize); 3] = [(8, 2, 2), (16, 3, 4), (32, 4, 4)];

fn bound(g: &mut Graph, state: &ModelState, cfg: &ipiqa::encoders::ModelConfig) -> ipiqa::encoders::ModelVars {
    state.bind(g, cfg, true).unwrap().model
}

pub fn encoders_match_naive_forward() {
    for (ci, &(d, grid, heads)) in CONFIGS.iter().enumerate() {
        let cfg = tiny_config(d, grid, heads, 7, 2);
        for inst in 0..20 {
            let seed = (ci * 100 + inst) as u64;
            let state = random_state(&cfg, seed, 0.4);
            let mut r = rng(seed);
            let image = random_image(&cfg.image, &mut r);
            let terminal = if r.random_bool(0.5) { Terminal::Qa } else { Terminal::Eot };
            let seq = random_sequence(&cfg.text, terminal, &mut r);

            let mut g = Graph::new();
            let m = bound(&mut g, &state, &cfg);
            let ev = encode_image(&mut g, &m, &cfg.image, &image).unwrap();
            let et = encode_text(&mut g, &m, &cfg.text, &seq).unwrap();
            let naive_v = encode_image_naive(&state, &cfg, &image);
            let naive_t = super::encode_text(&state, &cfg.text, &seq);
            assert_eq!(g.shape(ev), [grid * grid, d]);
            assert!(max_diff(g.value(ev).data(), &flat(&naive_v)) <= 1e-12, "image d={d} seed={seed}");
            // Rows past the terminal token attend only to unmasked keys;
            // compare every row.
            assert!(max_diff(g.value(et).data(), &flat(&naive_t)) <= 1e-12, "text d={d} seed={seed}");
        }
    }
}

fn encode_image_naive(state: &ModelState, cfg: &ipiqa::encoders::ModelConfig, image: &Tensor) -> M {
    super::encode_image(state, &cfg.image, image)
}

pub fn fusion_matches_naive_pools() {
    for (ci, &(d, grid, heads)) in CONFIGS.iter().enumerate() {
        let cfg = tiny_config(d, grid, heads, 5, 1);
        let p = grid * grid;
        for inst in 0..20 {
            let seed = (1000 + ci * 100 + inst) as u64;
            let state = random_state(&cfg, seed, 0.5);
            let mut r = rng(seed);
            let ev = Tensor::randn(&[p, d], 1.0, &mut r);
            let query = Tensor::randn(&[d], 1.0, &mut r);

            let mut g = Graph::new();
            let m = bound(&mut g, &state, &cfg);
            let ev_var = g.constant(ev.clone());
            let q_var = g.constant(query.clone());
            let ev_rows = matrix(&ev);
            for (branch, name) in [(Branch::Visual, "visual"), (Branch::Cross, "cross")] {
                let out = attention_pool(&mut g, &m.fusion, branch, ev_var, q_var).unwrap();
                let naive = super::attention_pool(&state, name, heads, &ev_rows, query.data());
                assert!(max_diff(g.value(out).data(), &naive) <= 1e-12, "{name} d={d} seed={seed}");
            }
            let s = fuse_and_score(&mut g, &m.fusion, &m.head, ev_var, q_var).unwrap();
            let naive = super::fuse_and_score(&state, heads, &ev_rows, query.data());
            assert!(max_diff(g.value(s).data(), &naive) <= 1e-12, "score d={d} seed={seed}");
        }
    }
}

pub fn text_global_matches_full_pass_bit_for_bit() {
    let cfg = tiny_config(16, 3, 4, 9, 2);
    for seed in 0..20 {
        let state = random_state(&cfg, seed, 0.4);
        let mut r = rng(seed);
        let seq = random_sequence(&cfg.text, Terminal::Qa, &mut r);
        let mut g = Graph::new();
        let m = bound(&mut g, &state, &cfg);
        let full = encode_text(&mut g, &m, &cfg.text, &seq).unwrap();
        let row = g.row(full, seq.terminal_pos).unwrap();
        let fast = text_global(&mut g, &m, &cfg.text, &seq).unwrap();
        assert!(g.value(row).bit_eq(g.value(fast)));
    }
}

fn series(x: &[f64], y: &[f64]) -> ScorePairSeries {
    ScorePairSeries::new(x.to_vec(), y.to_vec()).unwrap()
}

/// Every pair of weak orderings of `n ≤ 6` items, up to a joint permutation
/// (which no metric can see): `x` sorted, `y` arbitrary.
pub fn rank_metrics_match_exhaustive_oracles() {
    let mut checked = 0usize;
    for n in 2..=6 {
        let ys = weak_orderings(n);
        for x in sorted_orderings(n) {
            for y in &ys {
                let s = series(&x, y);
                let want_s = pearson_oracle(&rank_oracle(&x), &rank_oracle(y));
                assert_eq!(srcc(&s).ok(), want_s, "srcc x={x:?} y={y:?}");
                assert_eq!(krcc(&s).ok(), kendall_oracle(&x, y), "krcc x={x:?} y={y:?}");
                checked += 1;
            }
        }
    }
    assert!(checked > 150_000);
}

pub fn weak_ordering_counts() {
    // Ordered Bell numbers.
    let counts: Vec<usize> = (1..=6).map(|n| weak_orderings(n).len()).collect();
    assert_eq!(counts, [1, 3, 13, 75, 541, 4683]);
}

pub fn krcc_pair_counting_example() {
    let k = krcc(&series(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])).unwrap();
    assert_eq!(Some(k), kendall_oracle(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]));
    assert!((k - 1.0 / 3.0).abs() < 1e-15);
}

pub fn plcc_matches_covariance_formula() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..50).map(|_| r.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + r.random_range(-2.0..2.0)).collect();
        let got = plcc(&series(&x, &y)).unwrap();
        assert!((got - pearson_oracle(&x, &y).unwrap()).abs() <= 1e-12);
    }
}

pub fn random_ranks_with_ties_match_oracles() {
    for seed in 0..200 {
        let mut r = rng(seed);
        let n = r.random_range(2..=8);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64).collect();
        let s = series(&x, &y);
        assert_eq!(krcc(&s).ok(), kendall_oracle(&x, &y));
        assert_eq!(srcc(&s).ok(), pearson_oracle(&rank_oracle(&x), &rank_oracle(&y)));
    }
}

/// Every check, by name, for the acceptance run.
pub const CHECKS: &[(&str, fn())] = &[
    ("encoders_match_naive_forward", encoders_match_naive_forward),
    ("fusion_matches_naive_pools", fusion_matches_naive_pools),
    ("text_global_matches_full_pass_bit_for_bit", text_global_matches_full_pass_bit_for_bit),
    ("rank_metrics_match_exhaustive_oracles", rank_metrics_match_exhaustive_oracles),
    ("weak_ordering_counts", weak_ordering_counts),
    ("krcc_pair_counting_example", krcc_pair_counting_example),
    ("plcc_matches_covariance_formula", plcc_matches_covariance_formula),
    ("random_ranks_with_ties_match_oracles", random_ranks_with_ties_match_oracles),
];
