use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    average_reports, evaluate, init_head_bias, pretrain_image2prompt, train_perception, EvalReport,
    Model, Preset, TrainConfig,
};
use crate::data::{split_by_object, ImagePromptPair, DEFAULT_TRAIN_RATIO};
use crate::encoders::ModelConfig;
use crate::error::{Error, Result};
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub train: TrainConfig,
    /// Image2Prompt epochs run before perception training when enabled.
    pub pretrain_epochs: usize,
    pub repeats: usize,
    pub train_ratio: f64,
}

impl ProtocolConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self {
                train: TrainConfig::preset(p),
                pretrain_epochs: 100,
                repeats: 10,
                train_ratio: DEFAULT_TRAIN_RATIO,
            },
            Preset::Toy => Self {
                train: TrainConfig::preset(p),
                pretrain_epochs: 50,
                repeats: 3,
                train_ratio: DEFAULT_TRAIN_RATIO,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.train.use_image2prompt && self.pretrain_epochs == 0 {
            return Err(Error::Config("pretrain_epochs must be positive".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config(format!("train ratio {} outside (0, 1)", self.train_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub mean: EvalReport,
    pub per_repeat: Vec<EvalReport>,
}

/// Output directory of a run:
/// `config.json`, `checkpoints/`, `reports/repeat_R.json`, `reports/summary.json`.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root.join("checkpoints"))?;
        std::fs::create_dir_all(root.join("reports"))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(path)
    }

    pub fn write_config<T: Serialize + ?Sized>(&self, cfg: &T) -> Result<PathBuf> {
        self.write_json("config.json", cfg)
    }

    /// `checkpoints/epoch_N.ipqa`, or `checkpoints/repeat_R/epoch_N.ipqa`.
    pub fn checkpoint_path(&self, repeat: Option<usize>, epoch: usize) -> PathBuf {
        let dir = self.root.join("checkpoints");
        let dir = match repeat {
            Some(r) => dir.join(format!("repeat_{r}")),
            None => dir,
        };
        dir.join(format!("epoch_{epoch}.ipqa"))
    }

    pub fn write_report(&self, report: &EvalReport) -> Result<PathBuf> {
        let r = report.repeat.unwrap_or(0);
        self.write_json(&format!("reports/repeat_{r}.json"), report)
    }

    pub fn write_summary(&self, report: &ProtocolReport) -> Result<PathBuf> {
        self.write_json("reports/summary.json", report)
    }
}

/// One repeat: object-atomic split with `seed + r`, fresh init, optional
/// Image2Prompt, perception training, held-out evaluation.
fn run_repeat(
    cfg: &ProtocolConfig,
    model_cfg: &ModelConfig,
    vocab: &Vocab,
    data: &[ImagePromptPair],
    r: usize,
    run_dir: Option<&RunDir>,
) -> Result<EvalReport> {
    let seed = cfg.train.seed.wrapping_add(r as u64);
    let (train, test) = split_by_object(data, cfg.train_ratio, seed)?;
    log::info!("repeat {r}: seed {seed}, {} train / {} test", train.len(), test.len());
    let mut model = Model::init(model_cfg.clone(), vocab.clone(), seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    if cfg.train.use_image2prompt {
        let pre = TrainConfig {
            epochs: cfg.pretrain_epochs,
            ..train_cfg.clone()
        };
        pretrain_image2prompt(&pre, &mut model, &train, None)?;
    }
    init_head_bias(&mut model, &train)?;
    train_perception(&train_cfg, &mut model, &train, None)?;
    let mut report = evaluate(&model, train_cfg.input_mode(), &test)?;
    report.repeat = Some(r);
    report.seed = Some(seed);
    if let Some(dir) = run_dir {
        model
            .state
            .save(&dir.checkpoint_path(Some(r), train_cfg.epochs))?;
        dir.write_report(&report)?;
    }
    Ok(report)
}

/// Repeats split/train/evaluate and averages the per-repeat metrics.
/// Repeats are independent, so `jobs > 1` runs them on worker threads
/// without changing any result.
pub fn run_protocol(
    cfg: &ProtocolConfig,
    model_cfg: &ModelConfig,
    vocab: &Vocab,
    data: &[ImagePromptPair],
    run_dir: Option<&RunDir>,
    jobs: usize,
) -> Result<ProtocolReport> {
    cfg.validate()?;
    if let Some(dir) = run_dir {
        Model::new(model_cfg.clone(), vocab.clone(), crate::encoders::ModelState::init(model_cfg, 0)?)?
            .save_meta(dir.root())?;
    }
    let jobs = jobs.clamp(1, cfg.repeats);
    let mut slots: Vec<Option<Result<EvalReport>>> = (0..cfg.repeats).map(|_| None).collect();
    if jobs == 1 {
        for (r, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_repeat(cfg, model_cfg, vocab, data, r, run_dir));
        }
    } else {
        std::thread::scope(|s| {
            let chunk = cfg.repeats.div_ceil(jobs);
            for (c, part) in slots.chunks_mut(chunk).enumerate() {
                s.spawn(move || {
                    for (k, slot) in part.iter_mut().enumerate() {
                        let r = c * chunk + k;
                        *slot = Some(run_repeat(cfg, model_cfg, vocab, data, r, run_dir));
                    }
                });
            }
        });
    }
    let per_repeat = slots
        .into_iter()
        .map(|s| s.expect("every repeat ran"))
        .collect::<Result<Vec<_>>>()?;
    let mean = average_reports(&per_repeat)?;
    let report = ProtocolReport { mean, per_repeat };
    if let Some(dir) = run_dir {
        dir.write_summary(&report)?;
    }
    Ok(report)
}
