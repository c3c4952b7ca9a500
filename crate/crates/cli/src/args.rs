//! Command-line surface. Flags are optional so that a `--config` file can
//! fill them; defaults are listed in each help line.

use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{ArgAction, Args, Parser, Subcommand};
use ipiqa::data::ScoreMode;
use ipiqa::pipelines::Preset;

#[derive(Debug, Parser)]
#[command(
    name = "ipiqa",
    version,
    about = "Image-prompt quality assessment: synthetic data, pair filtering, training, evaluation",
    after_help = "Logs go to standard error (filter with RUST_LOG); JSON results go to standard output."
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Default set for unspecified flags [default: toy]
    #[arg(long, global = true, value_parser = preset_parser())]
    pub preset: Option<Preset>,
    /// JSON object of flag values (keys are long flag names with `_` for `-`);
    /// command-line flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

fn preset_parser() -> impl TypedValueParser<Value = Preset> {
    PossibleValuesParser::new(["paper", "toy"]).map(|s| s.parse::<Preset>().expect("listed value"))
}

fn mode_parser() -> impl TypedValueParser<Value = ScoreMode> {
    PossibleValuesParser::new(["coupled", "decoupled"])
        .map(|s| s.parse::<ScoreMode>().expect("listed value"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic manifest with planted quality and alignment
    GenData(GenDataArgs),
    /// Keep pairs whose image and prompt embeddings agree
    Filter(FilterArgs),
    /// Image2Prompt pretraining of the image tower
    Pretrain(PretrainArgs),
    /// Perception training on a manifest, optionally after Image2Prompt
    Train(TrainArgs),
    /// Score a manifest with a checkpoint and report SRCC/PLCC/KRCC
    Eval(EvalArgs),
    /// Repeated object-level splits with train and held-out evaluation
    Protocol(ProtocolArgs),
    /// Export the fusion attention maps of one sample
    Attnmap(AttnmapArgs),
    /// Print the resolved configuration of a command as a config file
    DumpConfig(DumpConfigArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Filter(_) => "filter",
            Command::Pretrain(_) => "pretrain",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Protocol(_) => "protocol",
            Command::Attnmap(_) => "attnmap",
            Command::DumpConfig(_) => "dump-config",
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct GenDataArgs {
    /// Output directory for manifest.jsonl, images/ and config.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of samples [default: 512]
    #[arg(long)]
    pub n: Option<usize>,
    /// Score layout [default: coupled]
    #[arg(long, value_parser = mode_parser())]
    pub mode: Option<ScoreMode>,
    /// Generator seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of object classes, 2..=8 [default: 8]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Size of the style-word pool prompts draw from, 2..=8 [default: 4]
    #[arg(long)]
    pub style_words: Option<usize>,
    /// Image side in pixels [default: 32]
    #[arg(long)]
    pub image_side: Option<usize>,
    /// Patch side the objects are aligned to [default: 8]
    #[arg(long)]
    pub patch_side: Option<usize>,
    /// Std of the noise added to planted scores [default: 0.1]
    #[arg(long)]
    pub label_noise: Option<f64>,
    /// Probability that a prompt names the depicted object [default: 0.5]
    #[arg(long)]
    pub aligned_prob: Option<f64>,
}

/// Where a trained model comes from.
#[derive(Debug, Default, Args)]
pub struct ModelSource {
    /// Checkpoint file (.ipqa)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory holding model.json and vocab.tsv [default: searched upwards from the checkpoint]
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

/// How prompts enter the model.
#[derive(Debug, Default, Args)]
pub struct InputArgs {
    /// Query the cross branch with the prompt; `false` uses an empty prompt [default: true]
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub use_integral_prompt: Option<bool>,
    /// End the prompt with the trainable [qa] token instead of [eot] [default: true]
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub use_qa_token: Option<bool>,
}

#[derive(Debug, Default, Args)]
pub struct OptimArgs {
    /// Mini-batch size [paper default: 40; toy default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Constant Adam learning rate [paper default: 1e-5; toy default: 1e-3]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialization and shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct FilterArgs {
    /// Input manifest (JSONL)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelSource,
    /// Minimum cosine similarity for a pair to be kept [default: 0.35, paper default]
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Output directory for the filtered manifest, report and config.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct PretrainArgs {
    /// Training manifest (JSONL)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelSource,
    /// Image2Prompt epochs [paper default: 100; toy default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Also save a checkpoint every N epochs; 0 saves only the last [default: 0]
    #[arg(long)]
    pub save_every: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Training manifest (JSONL)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh model; Image2Prompt is then skipped
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory holding model.json and vocab.tsv for --checkpoint [default: searched upwards from the checkpoint]
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Perception-training epochs [paper default: 100; toy default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Run Image2Prompt pretraining before perception training [default: true]
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub use_image2prompt: Option<bool>,
    /// Image2Prompt epochs [paper default: 100; toy default: 50]
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[command(flatten)]
    pub input: InputArgs,
    /// Set the score-head bias to the mean training target first [default: true]
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub init_head_bias: Option<bool>,
    /// Also save a checkpoint every N epochs; 0 saves only the last [default: 0]
    #[arg(long)]
    pub save_every: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct EvalArgs {
    /// Manifest to score (JSONL)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelSource,
    #[command(flatten)]
    pub input: InputArgs,
    /// Run directory for config.json and reports/eval.json [default: none]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct ProtocolArgs {
    /// Manifest to split (JSONL)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of random splits [paper default: 10; toy default: 3]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Fraction of pairs on the training side [paper default: 0.8; toy default: 0.8]
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Perception-training epochs [paper default: 100; toy default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Run Image2Prompt pretraining before perception training [default: true]
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub use_image2prompt: Option<bool>,
    /// Image2Prompt epochs [paper default: 100; toy default: 50]
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[command(flatten)]
    pub input: InputArgs,
    /// Worker threads for the repeats; results do not depend on it [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct AttnmapArgs {
    /// Manifest holding the sample (JSONL)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelSource,
    /// Sample id [default: first sample of the manifest]
    #[arg(long)]
    pub id: Option<String>,
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory for the text and PGM maps
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpConfigArgs {
    /// Command whose configuration to print
    #[arg(default_value = "protocol", value_parser = PossibleValuesParser::new(
        ["gen-data", "filter", "pretrain", "train", "eval", "protocol", "attnmap"]
    ))]
    pub command: String,
}
