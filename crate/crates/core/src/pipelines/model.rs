use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::InputMode;
use crate::data::ImagePromptPair;
use crate::encoders::{
    encode_image, image_global, text_global, ImageEncoderConfig, ModelConfig, ModelState,
    ModelVars, TextEncoderConfig, QA_EMBEDDING, TEXT_ENCODER,
};
use crate::error::{Error, Result};
use crate::fusion::{attention_maps, fuse_and_score, Branch};
use crate::numerics::{Graph, Tensor, Var};
use crate::tokenizer::{Terminal, TokenSequence, Vocab};

pub const MODEL_CONFIG_FILE: &str = "model.json";
pub const VOCAB_FILE: &str = "vocab.tsv";

/// Default architecture sized to the images of `pairs`; see [`Model::default_for`].
pub fn default_config(pairs: &[ImagePromptPair], n_out: usize) -> Result<(ModelConfig, Vocab)> {
    let prompts: Vec<&str> = pairs.iter().map(|p| p.prompt.as_str()).collect();
    let text = TextEncoderConfig::default();
    let vocab = Vocab::build(&prompts, text.vocab_size)?;
    let mut image = ImageEncoderConfig::default();
    if let Some(first) = pairs.first() {
        match first.image.shape() {
            &[c, h, w] if h == w => {
                image.in_channels = c;
                image.image_side = h;
            }
            other => {
                return Err(Error::Data(format!(
                    "expected square [C, H, W] images, got {other:?}"
                )))
            }
        }
    }
    let cfg = ModelConfig {
        image,
        text: TextEncoderConfig {
            vocab_size: vocab.len(),
            ..text
        },
        fusion_heads: 4,
        n_out,
    };
    cfg.validate()?;
    Ok((cfg, vocab))
}

/// Architecture, vocabulary and parameters travelling together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub state: ModelState,
}

impl Model {
    pub fn new(cfg: ModelConfig, vocab: Vocab, state: ModelState) -> Result<Self> {
        cfg.validate()?;
        if cfg.text.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "text vocab_size {} does not match the {}-entry vocabulary",
                cfg.text.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self { cfg, vocab, state })
    }

    /// Default architecture with `n_out` scores and a vocabulary built from
    /// the prompts of `pairs`, capped at the default vocabulary size.
    pub fn default_for(pairs: &[ImagePromptPair], n_out: usize, seed: u64) -> Result<Self> {
        let (cfg, vocab) = default_config(pairs, n_out)?;
        Self::init(cfg, vocab, seed)
    }

    pub fn init(cfg: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let state = ModelState::init(&cfg, seed)?;
        Self::new(cfg, vocab, state)
    }

    /// Writes `model.json` and `vocab.tsv` into `dir`.
    pub fn save_meta(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MODEL_CONFIG_FILE), serde_json::to_string_pretty(&self.cfg)?)?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    /// Loads a checkpoint plus the `model.json`/`vocab.tsv` found in
    /// `meta_dir`, or else in the nearest of the three directories above it.
    pub fn load(checkpoint: &Path, meta_dir: Option<&Path>) -> Result<Self> {
        let dir = match meta_dir {
            Some(d) => d.to_path_buf(),
            None => find_meta_dir(checkpoint)?,
        };
        let cfg: ModelConfig =
            serde_json::from_str(&std::fs::read_to_string(dir.join(MODEL_CONFIG_FILE))?)?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let state = ModelState::load(checkpoint)?;
        Self::new(cfg, vocab, state)
    }

    pub fn sequence(&self, prompt: &str, mode: InputMode) -> Result<TokenSequence> {
        self.vocab
            .encode(mode.prompt_text(prompt), self.cfg.text.context_len, mode.terminal())
    }

    /// True when `G_t` does not depend on any trainable parameter, so it can
    /// be computed once per prompt.
    pub(crate) fn text_is_constant(&self, terminal: Terminal) -> Result<bool> {
        Ok(self.state.is_frozen(TEXT_ENCODER)?
            && (terminal == Terminal::Eot || self.state.is_frozen(QA_EMBEDDING)?))
    }

    /// `G_t` value for every distinct prompt, computed in one graph.
    pub(crate) fn text_globals(
        &self,
        prompts: &[&str],
        mode: InputMode,
    ) -> Result<HashMap<String, Tensor>> {
        let mut g = Graph::new();
        let bound = self.state.bind(&mut g, &self.cfg, false)?;
        let mut out = HashMap::new();
        for &p in prompts {
            let key = mode.prompt_text(p).to_string();
            if out.contains_key(&key) {
                continue;
            }
            let seq = self.sequence(p, mode)?;
            let gt = text_global(&mut g, &bound.model, &self.cfg.text, &seq)?;
            out.insert(key, g.value(gt).clone());
        }
        Ok(out)
    }

    /// Model scores for each pair, `[n_out]` per pair.
    pub fn predict(&self, pairs: &[ImagePromptPair], mode: InputMode) -> Result<Vec<Vec<f64>>> {
        let prompts: Vec<&str> = pairs.iter().map(|p| p.prompt.as_str()).collect();
        let cache = self.text_globals(&prompts, mode)?;
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(32) {
            let mut g = Graph::new();
            let bound = self.state.bind(&mut g, &self.cfg, false)?;
            for p in chunk {
                let gt = g.constant(cache[mode.prompt_text(&p.prompt)].clone());
                let s = self.scores(&mut g, &bound.model, &p.image, gt)?;
                out.push(g.value(s).data().to_vec());
            }
        }
        Ok(out)
    }

    pub(crate) fn scores(&self, g: &mut Graph, m: &ModelVars, image: &Tensor, g_t: Var) -> Result<Var> {
        let ev = encode_image(g, m, &self.cfg.image, image)?;
        fuse_and_score(g, &m.fusion, &m.head, ev, g_t)
    }

    /// Image-side global embedding used by Image2Prompt and the pair filter.
    pub fn image_embedding(&self, image: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.state.bind(&mut g, &self.cfg, false)?;
        let ev = encode_image(&mut g, &bound.model, &self.cfg.image, image)?;
        let e = image_global(&mut g, &bound.model, ev)?;
        Ok(g.value(e).data().to_vec())
    }

    /// Per-head attention weights of both pools for one pair, each
    /// `[n_heads×p]`.
    pub fn attention_maps(
        &self,
        image: &Tensor,
        prompt: &str,
        mode: InputMode,
    ) -> Result<Vec<(Branch, Tensor)>> {
        let mut g = Graph::new();
        let bound = self.state.bind(&mut g, &self.cfg, false)?;
        let seq = self.sequence(prompt, mode)?;
        let g_t = text_global(&mut g, &bound.model, &self.cfg.text, &seq)?;
        let ev = encode_image(&mut g, &bound.model, &self.cfg.image, image)?;
        let gap = g.mean_rows(ev)?;
        let visual = attention_maps(&mut g, &bound.model.fusion, Branch::Visual, ev, gap)?;
        let cross = attention_maps(&mut g, &bound.model.fusion, Branch::Cross, ev, g_t)?;
        Ok(vec![(Branch::Visual, visual), (Branch::Cross, cross)])
    }

    /// `[eot]`-terminated prompt embedding used by Image2Prompt and the pair
    /// filter.
    pub fn text_embedding(&self, prompt: &str) -> Result<Vec<f64>> {
        let cache = self.text_globals(&[prompt], InputMode::PRETRAIN)?;
        Ok(cache[prompt].data().to_vec())
    }
}

fn find_meta_dir(checkpoint: &Path) -> Result<PathBuf> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    // Up to `<run>/checkpoints/repeat_R/epoch_N.ipqa`.
    for candidate in dir.ancestors().take(3) {
        if candidate.join(MODEL_CONFIG_FILE).is_file() {
            return Ok(candidate.to_path_buf());
        }
    }
    Err(Error::Config(format!(
        "no {MODEL_CONFIG_FILE} within two directories above {}",
        checkpoint.display()
    )))
}
