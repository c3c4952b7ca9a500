//! Dual-stream encoders and the grouped parameter state they share with
//! the fusion module and score head.

mod block;
mod checkpoint;
mod image;
mod state;
mod text;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use image::{encode_image, image_global, patchify};
pub use state::{
    BlockVars, BoundModel, BranchVars, FusionVars, HeadVars, ImageEncoderVars, ModelState, ModelVars,
    ParamGroup, TextEncoderVars,
};
pub use text::{encode_text, encode_text_prefix, terminal_row, text_global};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_ENCODER: &str = "image_encoder";
pub const TEXT_ENCODER: &str = "text_encoder";
pub const QA_EMBEDDING: &str = "qa_embedding";
pub const FUSION: &str = "fusion";
pub const HEAD: &str = "head";

pub const GROUP_NAMES: [&str; 5] = [IMAGE_ENCODER, TEXT_ENCODER, QA_EMBEDDING, FUSION, HEAD];

/// Standard deviation of embedding-table initialization. Linear weights use
/// `1/sqrt(fan_in)`.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEncoderConfig {
    pub in_channels: usize,
    pub image_side: usize,
    pub patch_side: usize,
    pub d: usize,
    pub depth: usize,
    pub n_heads: usize,
    /// Hidden width of the block MLP as a multiple of `d`.
    pub mlp_ratio: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            image_side: 32,
            patch_side: 8,
            d: 32,
            depth: 2,
            n_heads: 4,
            mlp_ratio: 2,
        }
    }
}

impl ImageEncoderConfig {
    pub fn grid_side(&self) -> usize {
        self.image_side / self.patch_side
    }

    pub fn n_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch_side * self.patch_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.patch_side == 0 || self.image_side == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if !self.image_side.is_multiple_of(self.patch_side) {
            return Err(Error::Config(format!(
                "image side {} is not divisible by patch side {}",
                self.image_side, self.patch_side
            )));
        }
        check_heads(self.d, self.n_heads)?;
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    /// Context length `L`.
    pub context_len: usize,
    pub d: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            context_len: 16,
            d: 32,
            depth: 2,
            n_heads: 4,
            mlp_ratio: 2,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the reserved tokens",
                self.vocab_size
            )));
        }
        if self.context_len < 3 {
            return Err(Error::Config(format!("context length {} is below 3", self.context_len)));
        }
        check_heads(self.d, self.n_heads)?;
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

fn check_heads(d: usize, n_heads: usize) -> Result<()> {
    if d == 0 || n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::Config(format!("d={d} is not divisible by n_heads={n_heads}")));
    }
    Ok(())
}

/// Architecture of the whole model: both towers, fusion heads and score arity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image: ImageEncoderConfig,
    pub text: TextEncoderConfig,
    /// Heads in the fusion attention pools.
    pub fusion_heads: usize,
    /// 1 for a coupled MOS, 2 for (quality, alignment).
    pub n_out: usize,
}

impl ModelConfig {
    pub fn d(&self) -> usize {
        self.image.d
    }

    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.text.validate()?;
        if self.image.d != self.text.d {
            return Err(Error::Config(format!(
                "image width {} and text width {} must match",
                self.image.d, self.text.d
            )));
        }
        check_heads(self.image.d, self.fusion_heads)?;
        if !(1..=2).contains(&self.n_out) {
            return Err(Error::Config(format!("n_out must be 1 or 2, got {}", self.n_out)));
        }
        Ok(())
    }
}
