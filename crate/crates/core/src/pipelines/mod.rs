//! Image2Prompt pretraining, perception training, evaluation and the
//! repeated-split protocol.

mod adam;
mod eval;
mod model;
mod protocol;
mod train;

pub use adam::{adam_step, AdamState};
pub use eval::{average_reports, evaluate, evaluate_predictions, EvalReport, HeadMetrics};
pub use model::{default_config, Model, MODEL_CONFIG_FILE, VOCAB_FILE};
pub use protocol::{run_protocol, ProtocolConfig, ProtocolReport, RunDir};
pub use train::{
    image2prompt_losses, init_head_bias, mean_image2prompt_loss, pretrain_image2prompt,
    train_perception, EpochHook, TrainLog,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Terminal;

/// Named default sets: the published recipe or a desk-scale one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Toy,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Constant learning rate; there is no decay schedule.
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub use_image2prompt: bool,
    pub use_integral_prompt: bool,
    pub use_qa_token: bool,
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self {
                batch_size: 40,
                lr: 1e-5,
                epochs: 100,
                ..Self::toy()
            },
            Preset::Toy => Self::toy(),
        }
    }

    fn toy() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            epochs: 200,
            seed: 0,
            use_image2prompt: true,
            use_integral_prompt: true,
            use_qa_token: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn input_mode(&self) -> InputMode {
        InputMode {
            use_integral_prompt: self.use_integral_prompt,
            use_qa_token: self.use_qa_token,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Toy)
    }
}

/// How a prompt is turned into the cross-branch query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputMode {
    /// When off, every prompt is replaced by the empty string.
    pub use_integral_prompt: bool,
    /// Close the prompt with `[qa]` instead of `[eot]`.
    pub use_qa_token: bool,
}

impl InputMode {
    /// `[eot]`-terminated prompts, as used for Image2Prompt.
    pub const PRETRAIN: InputMode = InputMode {
        use_integral_prompt: true,
        use_qa_token: false,
    };

    pub fn terminal(self) -> Terminal {
        if self.use_qa_token {
            Terminal::Qa
        } else {
            Terminal::Eot
        }
    }

    pub fn prompt_text(self, prompt: &str) -> &str {
        if self.use_integral_prompt {
            prompt
        } else {
            ""
        }
    }
}
