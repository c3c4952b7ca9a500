use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    ModelConfig, FUSION, GROUP_NAMES, HEAD, IMAGE_ENCODER, INIT_STD, QA_EMBEDDING, TEXT_ENCODER,
};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::tokenizer::{EOT, QA};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub frozen: bool,
    pub params: Vec<(String, Tensor)>,
}

impl ParamGroup {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// FNV-1a over names, shapes and value bits; used for freeze audits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in &self.params {
            eat(name.as_bytes());
            for d in t.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Named parameter groups, each with its own frozen flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    groups: Vec<ParamGroup>,
}

/// `[out×in]` weight with std `1/sqrt(in)`.
fn linear(out: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(&[out, fan_in], (fan_in as f64).powf(-0.5), rng)
}

fn block_params(
    prefix: &str,
    d: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, Tensor)> {
    let n = |s: &str| format!("{prefix}.{s}");
    vec![
        (n("ln1.gain"), Tensor::filled(&[d], 1.0)),
        (n("ln1.bias"), Tensor::zeros(&[d])),
        (n("attn.wq"), linear(d, d, rng)),
        (n("attn.wk"), linear(d, d, rng)),
        (n("attn.wv"), linear(d, d, rng)),
        (n("attn.wo"), linear(d, d, rng)),
        (n("attn.bo"), Tensor::zeros(&[d])),
        (n("ln2.gain"), Tensor::filled(&[d], 1.0)),
        (n("ln2.bias"), Tensor::zeros(&[d])),
        (n("mlp.w1"), linear(hidden, d, rng)),
        (n("mlp.b1"), Tensor::zeros(&[hidden])),
        (n("mlp.w2"), linear(d, hidden, rng)),
        (n("mlp.b2"), Tensor::zeros(&[d])),
    ]
}

fn branch_params(prefix: &str, d: usize, rng: &mut ChaCha8Rng) -> Vec<(String, Tensor)> {
    ["wq", "wk", "wv", "wo"]
        .iter()
        .map(|w| (format!("{prefix}.{w}"), linear(d, d, rng)))
        .collect()
}

impl ModelState {
    /// Seeded random initialization; every group starts trainable. The `[qa]`
    /// row starts as a copy of the `[eot]` row.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d();

        let ic = &cfg.image;
        let mut image = vec![
            (
                "patch_embed.weight".to_string(),
                linear(d, ic.patch_dim(), &mut rng),
            ),
            ("patch_embed.bias".to_string(), Tensor::zeros(&[d])),
        ];
        for b in 0..ic.depth {
            image.extend(block_params(&format!("blocks.{b}"), d, d * ic.mlp_ratio, &mut rng));
        }
        image.push(("proj.weight".to_string(), linear(d, d, &mut rng)));

        let tc = &cfg.text;
        let token_table = Tensor::randn(&[tc.vocab_size, d], INIT_STD, &mut rng);
        let qa_row = Tensor::vector(token_table.row(EOT).to_vec())?;
        let mut text = vec![
            ("token_embedding".to_string(), token_table),
            (
                "position_embedding".to_string(),
                Tensor::randn(&[tc.context_len, d], INIT_STD, &mut rng),
            ),
        ];
        for b in 0..tc.depth {
            text.extend(block_params(&format!("blocks.{b}"), d, d * tc.mlp_ratio, &mut rng));
        }

        let mut fusion = vec![(
            "pos_embed".to_string(),
            Tensor::randn(&[ic.n_patches(), d], INIT_STD, &mut rng),
        )];
        fusion.extend(branch_params("visual", d, &mut rng));
        fusion.extend(branch_params("cross", d, &mut rng));

        let head = vec![
            ("weight".to_string(), Tensor::randn(&[2 * d, cfg.n_out], (2.0 * d as f64).powf(-0.5), &mut rng)),
            ("bias".to_string(), Tensor::zeros(&[cfg.n_out])),
        ];

        let groups = [
            (IMAGE_ENCODER, image),
            (TEXT_ENCODER, text),
            (QA_EMBEDDING, vec![("row".to_string(), qa_row)]),
            (FUSION, fusion),
            (HEAD, head),
        ]
        .into_iter()
        .map(|(name, params)| ParamGroup {
            name: name.to_string(),
            frozen: false,
            params,
        })
        .collect();
        Ok(Self { groups })
    }

    pub fn from_groups(groups: Vec<ParamGroup>) -> Result<Self> {
        for want in GROUP_NAMES {
            if !groups.iter().any(|g| g.name == want) {
                return Err(Error::UnknownGroup(format!("{want} (missing from state)")));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Result<&ParamGroup> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::UnknownGroup(name.to_string()))
    }

    pub fn group_mut(&mut self, name: &str) -> Result<&mut ParamGroup> {
        self.groups
            .iter_mut()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::UnknownGroup(name.to_string()))
    }

    pub fn param(&self, group: &str, name: &str) -> Result<&Tensor> {
        self.group(group)?
            .get(name)
            .ok_or_else(|| Error::Config(format!("no parameter `{name}` in group `{group}`")))
    }

    pub fn param_mut(&mut self, group: &str, name: &str) -> Result<&mut Tensor> {
        let g = self.group_mut(group)?;
        g.params
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("no parameter `{name}` in group `{group}`")))
    }

    /// Frozen groups are skipped by the optimizer.
    pub fn set_frozen(&mut self, group: &str, frozen: bool) -> Result<()> {
        self.group_mut(group)?.frozen = frozen;
        Ok(())
    }

    pub fn is_frozen(&self, group: &str) -> Result<bool> {
        Ok(self.group(group)?.frozen)
    }

    /// Freezes every group except those listed.
    pub fn train_only(&mut self, trainable: &[&str]) -> Result<()> {
        for t in trainable {
            self.group(t)?;
        }
        for g in &mut self.groups {
            g.frozen = !trainable.contains(&g.name.as_str());
        }
        Ok(())
    }

    pub fn n_values(&self) -> usize {
        self.groups.iter().map(ParamGroup::n_values).sum()
    }

    pub fn clear_grads(&mut self) {
        for g in &mut self.groups {
            for (_, t) in &mut g.params {
                t.clear_grad();
            }
        }
    }

    /// `group.param` names in canonical order.
    pub fn param_names(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| g.params.iter().map(move |(n, _)| format!("{}.{n}", g.name)))
            .collect()
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.groups
            .iter()
            .flat_map(|g| g.params.iter().map(|(_, t)| t.clone()))
            .collect()
    }

    /// Records every parameter as a leaf. Frozen groups become constants
    /// unless `all_trainable` is set.
    pub fn bind(&self, g: &mut Graph, cfg: &ModelConfig, all_trainable: bool) -> Result<BoundModel> {
        let mut leaves = Vec::new();
        let mut names = Vec::new();
        for (gi, group) in self.groups.iter().enumerate() {
            for (pi, (name, t)) in group.params.iter().enumerate() {
                let v = g.leaf(t.clone(), all_trainable || !group.frozen);
                leaves.push((gi, pi, v));
                names.push(format!("{}.{name}", group.name));
            }
        }
        let vars: Vec<Var> = leaves.iter().map(|l| l.2).collect();
        let model = ModelVars::from_named(g, cfg, &names, &vars)?;
        Ok(BoundModel { model, leaves })
    }

    /// Adds the gradients of bound, trainable leaves into the parameter grad
    /// slots. Trainable leaves the loss never reached get zeros.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &BoundModel) {
        for &(gi, pi, v) in &bound.leaves {
            if !g.requires_grad(v) {
                continue;
            }
            let t = &mut self.groups[gi].params[pi].1;
            match g.grad(v) {
                Some(grad) => t.accumulate_grad(grad),
                None => {
                    t.ensure_grad();
                }
            }
        }
    }
}

/// A model bound into one graph together with the leaf bookkeeping needed to
/// route gradients back to [`ModelState`].
pub struct BoundModel {
    pub model: ModelVars,
    leaves: Vec<(usize, usize, Var)>,
}

#[derive(Debug, Clone)]
pub struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone)]
pub struct ImageEncoderVars {
    pub patch_w: Var,
    pub patch_b: Var,
    pub blocks: Vec<BlockVars>,
    pub proj: Var,
}

#[derive(Debug, Clone)]
pub struct TextEncoderVars {
    /// Token table with the `[qa]` row taken from the `qa_embedding` group.
    pub table: Var,
    pub position: Var,
    pub blocks: Vec<BlockVars>,
}

#[derive(Debug, Clone)]
pub struct BranchVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

#[derive(Debug, Clone)]
pub struct FusionVars {
    pub pos: Var,
    pub visual: BranchVars,
    pub cross: BranchVars,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct HeadVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub image: ImageEncoderVars,
    pub text: TextEncoderVars,
    pub fusion: FusionVars,
    pub head: HeadVars,
}

impl ModelVars {
    /// Assembles typed handles from `group.param` names.
    pub fn from_named(g: &mut Graph, cfg: &ModelConfig, names: &[String], vars: &[Var]) -> Result<Self> {
        let map: HashMap<&str, Var> = names.iter().map(String::as_str).zip(vars.iter().copied()).collect();
        let get = |k: String| {
            map.get(k.as_str())
                .copied()
                .ok_or_else(|| Error::Config(format!("missing parameter `{k}`")))
        };
        let block = |prefix: String| -> Result<BlockVars> {
            let p = |s: &str| get(format!("{prefix}.{s}"));
            Ok(BlockVars {
                ln1_gain: p("ln1.gain")?,
                ln1_bias: p("ln1.bias")?,
                wq: p("attn.wq")?,
                wk: p("attn.wk")?,
                wv: p("attn.wv")?,
                wo: p("attn.wo")?,
                bo: p("attn.bo")?,
                ln2_gain: p("ln2.gain")?,
                ln2_bias: p("ln2.bias")?,
                w1: p("mlp.w1")?,
                b1: p("mlp.b1")?,
                w2: p("mlp.w2")?,
                b2: p("mlp.b2")?,
            })
        };
        let branch = |prefix: &str| -> Result<BranchVars> {
            let p = |s: &str| get(format!("{FUSION}.{prefix}.{s}"));
            Ok(BranchVars {
                wq: p("wq")?,
                wk: p("wk")?,
                wv: p("wv")?,
                wo: p("wo")?,
            })
        };

        let image = ImageEncoderVars {
            patch_w: get(format!("{IMAGE_ENCODER}.patch_embed.weight"))?,
            patch_b: get(format!("{IMAGE_ENCODER}.patch_embed.bias"))?,
            blocks: (0..cfg.image.depth)
                .map(|b| block(format!("{IMAGE_ENCODER}.blocks.{b}")))
                .collect::<Result<_>>()?,
            proj: get(format!("{IMAGE_ENCODER}.proj.weight"))?,
        };

        let token = get(format!("{TEXT_ENCODER}.token_embedding"))?;
        let qa = get(format!("{QA_EMBEDDING}.row"))?;
        let table = splice_qa_row(g, token, qa)?;
        let text = TextEncoderVars {
            table,
            position: get(format!("{TEXT_ENCODER}.position_embedding"))?,
            blocks: (0..cfg.text.depth)
                .map(|b| block(format!("{TEXT_ENCODER}.blocks.{b}")))
                .collect::<Result<_>>()?,
        };

        let fusion = FusionVars {
            pos: get(format!("{FUSION}.pos_embed"))?,
            visual: branch("visual")?,
            cross: branch("cross")?,
            n_heads: cfg.fusion_heads,
        };
        let head = HeadVars {
            weight: get(format!("{HEAD}.weight"))?,
            bias: get(format!("{HEAD}.bias"))?,
        };
        Ok(Self {
            image,
            text,
            fusion,
            head,
        })
    }
}

/// Replaces row `[qa]` of the token table with the separately trained row.
fn splice_qa_row(g: &mut Graph, token: Var, qa: Var) -> Result<Var> {
    let (v, d) = (g.shape(token)[0], g.shape(token)[1]);
    let before = g.slice_rows(token, 0, QA)?;
    let qa_row = g.reshape(qa, &[1, d])?;
    let head = g.concat(before, qa_row, 0)?;
    let after = g.slice_rows(token, QA + 1, v - QA - 1)?;
    g.concat(head, after, 0)
}
