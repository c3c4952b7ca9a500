//! Image-prompt-MOS datasets: JSONL manifests, the similarity filter,
//! object-atomic splitting and the synthetic generator.

mod filter;
mod manifest;
mod split;
mod synthetic;

pub use filter::{cosine_similarity, filter_pairs, FilterOutcome, DEFAULT_THRESHOLD};
pub use manifest::{load_manifest, save_manifest, MOS_MAX, MOS_MIN};
pub use split::{split_by_object, DEFAULT_TRAIN_RATIO};
pub use synthetic::{gen_synthetic, gen_synthetic_samples, Latents, ScoreMode, SyntheticConfig, SyntheticSample, CLASS_NAMES, STYLE_WORDS};

use crate::numerics::Tensor;

/// One image, its prompt and the human (or planted) scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePromptPair {
    pub id: String,
    /// `[C×H×W]`.
    pub image: Tensor,
    pub prompt: String,
    pub mos_quality: f64,
    /// Present only for decoupled datasets.
    pub mos_align: Option<f64>,
    pub object_label: String,
}

impl ImagePromptPair {
    /// Regression targets: `[quality]` or `[quality, alignment]`.
    pub fn targets(&self) -> Vec<f64> {
        match self.mos_align {
            Some(a) => vec![self.mos_quality, a],
            None => vec![self.mos_quality],
        }
    }
}
