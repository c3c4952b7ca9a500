use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImagePromptPair;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CLASS_NAMES: [&str; 12] = [
    "apple", "boat", "cat", "dog", "house", "tree", "car", "bird", "flower", "chair", "lamp", "fish",
];

pub const STYLE_WORDS: [&str; 8] = [
    "vivid", "dark", "bright", "soft", "retro", "misty", "sharp", "warm",
];

/// Coupled: one MOS that mixes quality and alignment. Decoupled: separate
/// quality and alignment scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Coupled,
    Decoupled,
}

impl ScoreMode {
    pub fn n_out(self) -> usize {
        match self {
            ScoreMode::Coupled => 1,
            ScoreMode::Decoupled => 2,
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(ScoreMode::Coupled),
            "decoupled" => Ok(ScoreMode::Decoupled),
            other => Err(Error::Config(format!("unknown score mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_object_classes: usize,
    /// Prompts draw two distinct words from the first `n_style_words`.
    pub n_style_words: usize,
    pub channels: usize,
    pub image_side: usize,
    /// Objects are placed on this grid so they cover whole patches.
    pub patch_side: usize,
    /// Blur σ (pixels) at `q = 0` and `q = 1`.
    pub blur_sigma: (f64, f64),
    /// Additive pixel-noise σ at `q = 0` and `q = 1`.
    pub noise_sigma: (f64, f64),
    pub mos_range: (f64, f64),
    /// σ of the Gaussian noise added to every planted score.
    pub label_noise: f64,
    /// Probability that the prompt names the depicted class.
    pub aligned_prob: f64,
    pub mode: ScoreMode,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Toy-scale defaults; coupled scores live in `[1, 5]`, decoupled in `[0, 5]`.
    pub fn new(mode: ScoreMode, n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            n_object_classes: 8,
            n_style_words: 4,
            channels: 3,
            image_side: 32,
            patch_side: 8,
            blur_sigma: (0.0, 1.2),
            noise_sigma: (0.0, 0.25),
            mos_range: match mode {
                ScoreMode::Coupled => (1.0, 5.0),
                ScoreMode::Decoupled => (0.0, 5.0),
            },
            label_noise: 0.1,
            aligned_prob: 0.5,
            mode,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=CLASS_NAMES.len()).contains(&self.n_object_classes) {
            return bad(format!(
                "n_object_classes must be in 2..={}, got {}",
                CLASS_NAMES.len(),
                self.n_object_classes
            ));
        }
        if !(2..=STYLE_WORDS.len()).contains(&self.n_style_words) {
            return bad(format!(
                "n_style_words must be in 2..={}, got {}",
                STYLE_WORDS.len(),
                self.n_style_words
            ));
        }
        if self.channels == 0 || self.patch_side == 0 || !self.image_side.is_multiple_of(self.patch_side) {
            return bad(format!(
                "image side {} must be a positive multiple of patch side {}",
                self.image_side, self.patch_side
            ));
        }
        if self.image_side == 0 {
            return bad("image side must be positive".into());
        }
        for (name, (lo, hi)) in [("blur_sigma", self.blur_sigma), ("noise_sigma", self.noise_sigma)] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} range ({lo}, {hi}) is not ordered and non-negative"));
            }
        }
        let (lo, hi) = self.mos_range;
        if !(lo >= super::MOS_MIN && lo < hi && hi <= super::MOS_MAX) {
            return bad(format!("mos_range ({lo}, {hi}) must be ordered within [0, 5]"));
        }
        if !(self.label_noise >= 0.0 && self.label_noise.is_finite()) {
            return bad(format!("label_noise {} must be non-negative", self.label_noise));
        }
        if !(0.0..=1.0).contains(&self.aligned_prob) {
            return bad(format!("aligned_prob {} outside [0, 1]", self.aligned_prob));
        }
        Ok(())
    }
}

/// The generator's hidden variables for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    /// Degradation level in `[0, 1]`.
    pub q: f64,
    /// Whether the prompt names the depicted class.
    pub aligned: bool,
    pub true_class: usize,
    pub named_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub pair: ImagePromptPair,
    pub latents: Latents,
}

pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Vec<ImagePromptPair>> {
    Ok(gen_synthetic_samples(cfg)?.into_iter().map(|s| s.pair).collect())
}

/// Like [`gen_synthetic`] but keeps the latent variables alongside each pair.
/// Each sample draws from its own stream derived from `(seed, index)`.
pub fn gen_synthetic_samples(cfg: &SyntheticConfig) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    (0..cfg.n_samples).map(|i| sample(cfg, i)).collect()
}

fn sample(cfg: &SyntheticConfig, index: usize) -> Result<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let k = cfg.n_object_classes;
    let true_class = rng.random_range(0..k);
    let q: f64 = rng.random();
    let aligned = rng.random_bool(cfg.aligned_prob);
    let named_class = if aligned {
        true_class
    } else {
        (true_class + rng.random_range(1..k)) % k
    };
    let ns = cfg.n_style_words;
    let s1 = rng.random_range(0..ns);
    let s2 = (s1 + rng.random_range(1..ns)) % ns;
    let (s1, s2) = (s1.min(s2), s1.max(s2));

    let grid = cfg.image_side / cfg.patch_side;
    let obj_cells = (grid / 2).max(1);
    let ox = rng.random_range(0..=grid - obj_cells) * cfg.patch_side;
    let oy = rng.random_range(0..=grid - obj_cells) * cfg.patch_side;
    let obj_side = obj_cells * cfg.patch_side;

    let mut image = render(cfg, true_class, (ox, oy, obj_side));
    let lerp = |(lo, hi): (f64, f64)| lo + q * (hi - lo);
    let blur = lerp(cfg.blur_sigma);
    if blur > 0.0 {
        gaussian_blur(&mut image, cfg.channels, cfg.image_side, blur);
    }
    let noise = lerp(cfg.noise_sigma);
    if noise > 0.0 {
        let dist = Normal::new(0.0, noise).expect("positive σ");
        for v in &mut image {
            *v += dist.sample(&mut rng);
        }
    }

    let label = Normal::new(0.0, cfg.label_noise.max(f64::MIN_POSITIVE)).expect("valid σ");
    let mut jitter = || {
        if cfg.label_noise > 0.0 {
            label.sample(&mut rng)
        } else {
            0.0
        }
    };
    let jitter = [jitter(), jitter()];
    let (mos_quality, mos_align) = planted_scores(cfg, q, aligned, jitter);

    let named = CLASS_NAMES[named_class];
    let (w1, w2) = (STYLE_WORDS[s1], STYLE_WORDS[s2]);
    let pair = ImagePromptPair {
        id: format!("syn-{index:05}"),
        image: Tensor::new(vec![cfg.channels, cfg.image_side, cfg.image_side], image)?,
        prompt: format!("a photo of a {named} {w1} {w2}"),
        mos_quality,
        mos_align,
        object_label: format!("{named}-{w1}-{w2}"),
    };
    Ok(SyntheticSample {
        pair,
        latents: Latents {
            q,
            aligned,
            true_class,
            named_class,
        },
    })
}

/// Quality is `scale(1 - q)` plus noise; coupled mode multiplies it by
/// `0.6 + 0.4 a`, decoupled mode adds `scale(a)` plus noise as the alignment
/// score. Everything is clipped to `mos_range`.
fn planted_scores(cfg: &SyntheticConfig, q: f64, aligned: bool, jitter: [f64; 2]) -> (f64, Option<f64>) {
    let (lo, hi) = cfg.mos_range;
    let clip = |v: f64| v.clamp(lo, hi);
    let a = f64::from(u8::from(aligned));
    let quality = lo + (hi - lo) * (1.0 - q) + jitter[0];
    match cfg.mode {
        ScoreMode::Coupled => (clip(quality * (0.6 + 0.4 * a)), None),
        ScoreMode::Decoupled => (clip(quality), Some(clip(lo + (hi - lo) * a + jitter[1]))),
    }
}

/// Horizontal-stripe gray background with a square of the class texture.
///
/// Class `c` has its own hue and an oriented sinusoid; the hue survives any
/// amount of blur, the sinusoid does not.
fn render(cfg: &SyntheticConfig, class: usize, (ox, oy, side): (usize, usize, usize)) -> Vec<f64> {
    use std::f64::consts::PI;
    let n = cfg.image_side;
    let k = cfg.n_object_classes as f64;
    let theta = PI * class as f64 / k;
    let (fx, fy) = (theta.cos() / 4.0, theta.sin() / 4.0);
    let mut out = vec![0.0; cfg.channels * n * n];
    for c in 0..cfg.channels {
        let hue = (2.0 * PI * (class as f64 / k + c as f64 / cfg.channels as f64)).cos();
        for y in 0..n {
            for x in 0..n {
                let inside = (ox..ox + side).contains(&x) && (oy..oy + side).contains(&y);
                out[(c * n + y) * n + x] = if inside {
                    let wave = (2.0 * PI * (fx * x as f64 + fy * y as f64)).cos();
                    0.8 * hue * (0.5 + 0.5 * wave)
                } else {
                    0.4 * (2.0 * PI * y as f64 / 4.0).cos()
                };
            }
        }
    }
    out
}

/// Separable Gaussian blur per channel with mirrored borders.
fn gaussian_blur(image: &mut [f64], channels: usize, n: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    let mirror = |i: isize| -> usize {
        let m = n as isize;
        let mut i = i;
        while i < 0 || i >= m {
            i = if i < 0 { -i - 1 } else { 2 * m - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; n * n];
    for c in 0..channels {
        let plane = &mut image[c * n * n..(c + 1) * n * n];
        for y in 0..n {
            for x in 0..n {
                tmp[y * n + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * plane[y * n + mirror(x as isize + j as isize - radius)])
                    .sum();
            }
        }
        for y in 0..n {
            for x in 0..n {
                plane[y * n + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * tmp[mirror(y as isize + j as isize - radius) * n + x])
                    .sum();
            }
        }
    }
}
