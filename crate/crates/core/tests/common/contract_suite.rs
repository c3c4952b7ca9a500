//! Structural guarantees: normalized attention, freezing, the `[qa]`-only
//! text update, per-epoch stage freezes, checkpoint identity, split atomicity, causality and
//! permutation behaviour.


use std::collections::{HashMap, HashSet};

use super::{model_instance, random_image, random_sequence, rng, small_synthetic, tiny_config};
use ipiqa::data::{gen_synthetic, split_by_object, ScoreMode, SyntheticConfig};
use ipiqa::encoders::{
    encode_image, encode_text, text_global, ModelState, GROUP_NAMES, HEAD, QA_EMBEDDING,
    TEXT_ENCODER,
};
use ipiqa::fusion::{attention_maps, attention_pool, fuse_and_score, Branch};
use ipiqa::losses_metrics::regression_loss;
use ipiqa::numerics::{Graph, Tensor};
use ipiqa::pipelines::{
    adam_step, init_head_bias, pretrain_image2prompt, train_perception, AdamState, Model, TrainConfig,
};
use ipiqa::tokenizer::{Terminal, PAD, SOT};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

fn groups_bit_equal(a: &ModelState, b: &ModelState, group: &str) -> bool {
    let (ga, gb) = (a.group(group).unwrap(), b.group(group).unwrap());
    ga.params.len() == gb.params.len()
        && ga
            .params
            .iter()
            .zip(&gb.params)
            .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
}

pub fn attention_rows_sum_to_one() {
    for (d, grid, heads) in [(8, 2, 2), (16, 3, 4), (32, 4, 4)] {
        let cfg = tiny_config(d, grid, heads, 6, 1);
        for seed in 0..20 {
            let state = model_instance(&cfg, seed);
            let mut r = rng(seed + 100);
            let mut g = Graph::new();
            let m = state.bind(&mut g, &cfg, false).unwrap().model;
            let ev = encode_image(&mut g, &m, &cfg.image, &random_image(&cfg.image, &mut r)).unwrap();
            let query = g.constant(Tensor::randn(&[d], 3.0, &mut r));
            for branch in [Branch::Visual, Branch::Cross] {
                let maps = attention_maps(&mut g, &m.fusion, branch, ev, query).unwrap();
                assert_eq!(maps.shape(), &[heads, grid * grid]);
                for row in maps.to_rows() {
                    let s: f64 = row.iter().sum();
                    assert!((s - 1.0).abs() <= 1e-9, "row sums to {s}");
                    assert!(row.iter().all(|&w| w >= 0.0));
                }
            }
        }
    }
}

/// One Adam step on the full-model loss of a random instance.
fn full_model_step(state: &mut ModelState, opt: &mut AdamState, seed: u64) {
    let cfg = tiny_config(8, 2, 2, 6, 1);
    let mut r = rng(seed);
    let image = random_image(&cfg.image, &mut r);
    let seq = random_sequence(&cfg.text, Terminal::Qa, &mut r);
    let target = Tensor::randn(&[2], 1.0, &mut r);
    let mut g = Graph::new();
    let bound = state.bind(&mut g, &cfg, false).unwrap();
    let m = &bound.model;
    let ev = encode_image(&mut g, m, &cfg.image, &image).unwrap();
    let gt = text_global(&mut g, m, &cfg.text, &seq).unwrap();
    let s = fuse_and_score(&mut g, &m.fusion, &m.head, ev, gt).unwrap();
    let t = g.constant(target);
    let loss = regression_loss(&mut g, s, t).unwrap();
    if g.requires_grad(loss) {
        g.backward(loss).unwrap();
    }
    state.accumulate_grads(&g, &bound);
    adam_step(state, opt, 1e-2).unwrap();
}

pub fn frozen_groups_are_bit_identical_after_100_steps() {
    let cfg = tiny_config(8, 2, 2, 6, 1);
    let mut r = rng(7);
    let mut subsets: Vec<Vec<&str>> = GROUP_NAMES.iter().map(|&g| vec![g]).collect();
    for _ in 0..3 {
        let k = r.random_range(2..GROUP_NAMES.len());
        subsets.push(GROUP_NAMES.choose_multiple(&mut r, k).copied().collect());
    }
    subsets.push(GROUP_NAMES.to_vec());
    for frozen in subsets {
        let start = model_instance(&cfg, 3);
        let mut state = start.clone();
        for &g in &frozen {
            state.set_frozen(g, true).unwrap();
        }
        let mut opt = AdamState::new();
        for step in 0..100 {
            full_model_step(&mut state, &mut opt, step);
        }
        for name in GROUP_NAMES {
            let same = groups_bit_equal(&start, &state, name);
            if frozen.contains(&name) {
                assert!(same, "frozen group {name} moved (frozen set {frozen:?})");
            } else {
                assert!(!same, "trainable group {name} never moved (frozen set {frozen:?})");
            }
        }
    }
}

/// Group hashes after every epoch of both training stages.
pub fn stage_freezes_hold_at_every_epoch() {
    let (mut model, data) = small_synthetic(ScoreMode::Decoupled, 12, 21);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 5,
        ..TrainConfig::default()
    };
    let hashes = |s: &ModelState| -> HashMap<&str, u64> {
        GROUP_NAMES.iter().map(|&n| (n, s.group(n).unwrap().fingerprint())).collect()
    };
    let audit = |stage: &str, model: &mut Model, frozen: &[&str], pretrain: bool, cfg: &TrainConfig| {
        let start = hashes(&model.state);
        let mut epochs = 0;
        let mut hook = |_: usize, s: &ModelState, _: f64| {
            let now = hashes(s);
            for g in frozen {
                assert_eq!(now[g], start[g], "{stage}: {g} moved");
            }
            epochs += 1;
            Ok(())
        };
        if pretrain {
            pretrain_image2prompt(cfg, model, &data, Some(&mut hook)).unwrap();
        } else {
            train_perception(cfg, model, &data, Some(&mut hook)).unwrap();
        }
        assert_eq!(epochs, cfg.epochs);
        let end = hashes(&model.state);
        GROUP_NAMES.iter().filter(|g| !frozen.contains(g)).filter(|g| end[*g] != start[*g]).count()
    };
    let moved = audit("image2prompt", &mut model, &[TEXT_ENCODER, QA_EMBEDDING, HEAD], true, &cfg);
    assert!(moved >= 1);
    init_head_bias(&mut model, &data).unwrap();
    let moved = audit("perception", &mut model, &[TEXT_ENCODER], false, &cfg);
    assert_eq!(moved, 4, "image, [qa], fusion and head all train");
    let no_qa = TrainConfig {
        use_qa_token: false,
        ..cfg
    };
    audit("perception without [qa]", &mut model, &[TEXT_ENCODER, QA_EMBEDDING], false, &no_qa);
}

pub fn only_the_qa_row_changes_on_the_text_side() {
    for use_qa_token in [true, false] {
        let (mut model, data) = small_synthetic(ScoreMode::Decoupled, 24, 5);
        let start = model.state.clone();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            use_qa_token,
            ..TrainConfig::default()
        };
        train_perception(&cfg, &mut model, &data, None).unwrap();
        assert!(groups_bit_equal(&start, &model.state, TEXT_ENCODER));
        assert_eq!(
            groups_bit_equal(&start, &model.state, QA_EMBEDDING),
            !use_qa_token,
            "qa row update with use_qa_token={use_qa_token}"
        );
    }
}

pub fn checkpoint_round_trip_is_bit_exact() {
    let (mut model, data) = small_synthetic(ScoreMode::Decoupled, 16, 9);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    train_perception(&cfg, &mut model, &data, None).unwrap();
    let bytes = model.state.to_bytes();
    let back = ModelState::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    for name in GROUP_NAMES {
        assert!(groups_bit_equal(&model.state, &back, name));
        assert_eq!(
            back.group(name).unwrap().fingerprint(),
            model.state.group(name).unwrap().fingerprint()
        );
        assert_eq!(back.is_frozen(name).unwrap(), model.state.is_frozen(name).unwrap());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/epoch_2.ipqa");
    model.state.save(&path).unwrap();
    model.save_meta(dir.path()).unwrap();
    let loaded = Model::load(&path, Some(dir.path())).unwrap();
    assert_eq!(loaded.state.to_bytes(), bytes);
    assert_eq!(loaded.cfg, model.cfg);
    assert_eq!(
        loaded.predict(&data, cfg.input_mode()).unwrap(),
        model.predict(&data, cfg.input_mode()).unwrap()
    );

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(ModelState::from_bytes(&corrupt).is_err());
    assert!(ModelState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut trailing = bytes;
    trailing.push(0);
    assert!(ModelState::from_bytes(&trailing).is_err());
}

pub fn split_is_label_atomic_for_50_seeds() {
    let sc = SyntheticConfig::new(ScoreMode::Coupled, 300, 1);
    let mut data = gen_synthetic(&sc).unwrap();
    for (i, p) in data.iter_mut().enumerate() {
        p.object_label = format!("obj-{}", i % 30);
    }
    for seed in 0..50 {
        let (train, test) = split_by_object(&data, 0.8, seed).unwrap();
        assert_eq!(train.len() + test.len(), data.len());
        let side: HashMap<&str, bool> = train
            .iter()
            .map(|p| (p.object_label.as_str(), true))
            .chain(test.iter().map(|p| (p.object_label.as_str(), false)))
            .collect();
        for p in &train {
            assert!(side[p.object_label.as_str()], "seed {seed}: {} straddles", p.object_label);
        }
        for p in &test {
            assert!(!side[p.object_label.as_str()], "seed {seed}: {} straddles", p.object_label);
        }
        let ids: HashSet<&str> = train.iter().chain(&test).map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), data.len());
        assert!(train.len() as f64 >= 0.8 * data.len() as f64);
        assert!(!test.is_empty());
    }
}

pub fn text_encoder_is_causal() {
    let cfg = tiny_config(16, 2, 4, 8, 2);
    for seed in 0..10 {
        let state = model_instance(&cfg, seed);
        let mut r = rng(seed);
        let mut seq = random_sequence(&cfg.text, Terminal::Eot, &mut r);
        seq.ids = vec![SOT, 5, 6, 7, 8, 9, 5, 2];
        seq.terminal_pos = 7;
        let mut g = Graph::new();
        let m = state.bind(&mut g, &cfg, false).unwrap().model;
        let v = encode_text(&mut g, &m, &cfg.text, &seq).unwrap();
        let before = g.value(v).clone();
        let k = r.random_range(1..7);
        let mut changed = seq.clone();
        for id in &mut changed.ids[k..7] {
            *id = 5 + (*id + 1 - 5) % 5;
        }
        let v = encode_text(&mut g, &m, &cfg.text, &changed).unwrap();
        let after = g.value(v).clone();
        for row in 0..8 {
            let same = before.row(row) == after.row(row);
            assert_eq!(same, row < k, "seed {seed} row {row} change at {k}");
        }
    }
}

pub fn padding_is_invisible_to_the_terminal_row() {
    let cfg = tiny_config(8, 2, 2, 8, 1);
    let state = model_instance(&cfg, 1);
    let mut r = rng(1);
    let seq = random_sequence(&cfg.text, Terminal::Qa, &mut r);
    let mut g = Graph::new();
    let m = state.bind(&mut g, &cfg, false).unwrap().model;
    let full = encode_text(&mut g, &m, &cfg.text, &seq).unwrap();
    let gt = text_global(&mut g, &m, &cfg.text, &seq).unwrap();
    assert!(g.value(full).row(seq.terminal_pos) == g.value(gt).data());
    assert!(seq.ids[seq.terminal_pos + 1..].iter().all(|&id| id == PAD));
}

pub fn image_encoder_is_patch_permutation_equivariant() {
    let cfg = tiny_config(8, 3, 2, 6, 2);
    for seed in 0..10 {
        let state = model_instance(&cfg, seed);
        let mut r = rng(seed);
        let image = random_image(&cfg.image, &mut r);
        let side = cfg.image.grid_side();
        let mut perm: Vec<usize> = (0..side * side).collect();
        perm.shuffle(&mut r);
        // Move whole 2×2 patches: patch j of the new image is patch perm[j].
        let (c, h) = (cfg.image.in_channels, cfg.image.image_side);
        let ps = cfg.image.patch_side;
        let mut moved = Tensor::zeros(&[c, h, h]);
        for (j, &src) in perm.iter().enumerate() {
            let (dy, dx) = (j / side * ps, j % side * ps);
            let (sy, sx) = (src / side * ps, src % side * ps);
            for ch in 0..c {
                for y in 0..ps {
                    for x in 0..ps {
                        let v = image.at(&[ch, sy + y, sx + x]);
                        moved.data_mut()[(ch * h + dy + y) * h + dx + x] = v;
                    }
                }
            }
        }
        let mut g = Graph::new();
        let m = state.bind(&mut g, &cfg, false).unwrap().model;
        let va = encode_image(&mut g, &m, &cfg.image, &image).unwrap();
        let a = g.value(va).clone();
        let vb = encode_image(&mut g, &m, &cfg.image, &moved).unwrap();
        let b = g.value(vb).clone();
        for (j, &src) in perm.iter().enumerate() {
            let diff = a
                .row(src)
                .iter()
                .zip(b.row(j))
                .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
            assert!(diff <= 1e-12, "seed {seed}: patch {src}->{j} differs by {diff}");
        }
    }
}

pub fn attention_pool_ignores_joint_row_order() {
    let cfg = tiny_config(8, 2, 2, 6, 1);
    for seed in 0..10 {
        let state = model_instance(&cfg, seed);
        let mut r = rng(seed);
        let ev = Tensor::randn(&[4, 8], 1.0, &mut r);
        let q = Tensor::randn(&[8], 1.0, &mut r);
        let mut perm: Vec<usize> = (0..4).collect();
        perm.shuffle(&mut r);
        let permute = |t: &Tensor| {
            Tensor::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap()
        };
        let pool = |state: &ModelState, ev: &Tensor, branch| {
            let mut g = Graph::new();
            let m = state.bind(&mut g, &cfg, false).unwrap().model;
            let (e, qv) = (g.constant(ev.clone()), g.constant(q.clone()));
            let out = attention_pool(&mut g, &m.fusion, branch, e, qv).unwrap();
            g.value(out).clone()
        };
        for branch in [Branch::Visual, Branch::Cross] {
            let base = pool(&state, &ev, branch);
            let pos = state.param("fusion", "pos_embed").unwrap().clone();
            let mut permuted = state.clone();
            *permuted.param_mut("fusion", "pos_embed").unwrap() = permute(&pos);
            let other = pool(&permuted, &permute(&ev), branch);
            assert!(base.max_abs_diff(&other) <= 1e-12);
        }
    }
}

/// Every check, by name, for the acceptance run.
pub const CHECKS: &[(&str, fn())] = &[
    ("attention_rows_sum_to_one", attention_rows_sum_to_one),
    ("frozen_groups_are_bit_identical_after_100_steps", frozen_groups_are_bit_identical_after_100_steps),
    ("stage_freezes_hold_at_every_epoch", stage_freezes_hold_at_every_epoch),
    ("only_the_qa_row_changes_on_the_text_side", only_the_qa_row_changes_on_the_text_side),
    ("checkpoint_round_trip_is_bit_exact", checkpoint_round_trip_is_bit_exact),
    ("split_is_label_atomic_for_50_seeds", split_is_label_atomic_for_50_seeds),
    ("text_encoder_is_causal", text_encoder_is_causal),
    ("padding_is_invisible_to_the_terminal_row", padding_is_invisible_to_the_terminal_row),
    ("image_encoder_is_patch_permutation_equivariant", image_encoder_is_patch_permutation_equivariant),
    ("attention_pool_ignores_joint_row_order", attention_pool_ignores_joint_row_order),
];
