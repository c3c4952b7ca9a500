//! One function per subcommand: resolve flags, echo the config, run, and
//! return the JSON result.

use std::path::{Path, PathBuf};

use anyhow::Context;
use ipiqa::data::{
    filter_pairs, gen_synthetic, load_manifest, save_manifest, ImagePromptPair, ScoreMode,
    SyntheticConfig, DEFAULT_THRESHOLD,
};
use ipiqa::fusion::{export_attention_maps, Branch};
use ipiqa::pipelines::{
    default_config, evaluate, init_head_bias, mean_image2prompt_loss, pretrain_image2prompt,
    run_protocol, train_perception, InputMode, Model, ProtocolConfig, RunDir, TrainConfig,
};
use serde_json::{json, Map, Value};

use crate::args::{
    AttnmapArgs, Common, EvalArgs, FilterArgs, GenDataArgs, InputArgs, OptimArgs, PretrainArgs,
    ProtocolArgs, TrainArgs,
};
use crate::error::{usage, CliError};
use crate::resolve::Resolver;

type Res<T> = Result<T, CliError>;

/// Resolved config plus what the command produced.
pub struct Outcome {
    pub config: Map<String, Value>,
    pub result: Value,
}

fn resolver(command: &'static str, common: &Common, dry: bool) -> Res<Resolver> {
    let r = Resolver::new(command, common.preset, common.config.as_deref())?;
    Ok(if dry { r.dry() } else { r })
}

/// Stops a dry run right after resolution.
macro_rules! dry_return {
    ($dry:expr, $config:expr) => {
        if $dry {
            return Ok(Outcome {
                config: $config,
                result: Value::Null,
            });
        }
    };
}

fn load_data(path: &Path) -> Res<Vec<ImagePromptPair>> {
    let data = load_manifest(path).with_context(|| format!("loading {}", path.display()))?;
    if data.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!("{} has no pairs", path.display())));
    }
    log::info!("{}: {} pairs", path.display(), data.len());
    Ok(data)
}

fn load_model(checkpoint: &Path, meta: Option<&Path>) -> Res<Model> {
    Model::load(checkpoint, meta)
        .with_context(|| format!("loading {}", checkpoint.display()))
        .map_err(Into::into)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Res<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}

fn n_out(data: &[ImagePromptPair]) -> usize {
    data[0].targets().len()
}

fn input_mode(r: &mut Resolver, a: InputArgs) -> Res<InputMode> {
    Ok(InputMode {
        use_integral_prompt: r.value("use_integral_prompt", a.use_integral_prompt, true)?,
        use_qa_token: r.value("use_qa_token", a.use_qa_token, true)?,
    })
}

/// Preset optimizer values overridden by flags; `epochs` is filled by the caller.
fn train_config(r: &mut Resolver, a: OptimArgs) -> Res<TrainConfig> {
    let base = TrainConfig::preset(r.preset());
    Ok(TrainConfig {
        batch_size: r.value("batch_size", a.batch_size, base.batch_size)?,
        lr: r.value("lr", a.lr, base.lr)?,
        seed: r.value("seed", a.seed, base.seed)?,
        ..base
    })
}

fn save_every_hook(
    run: &RunDir,
    every: usize,
) -> impl FnMut(usize, &ipiqa::encoders::ModelState, f64) -> ipiqa::Result<()> + '_ {
    move |epoch, state, _| {
        if every > 0 && epoch % every == 0 {
            state.save(&run.checkpoint_path(None, epoch))?;
        }
        Ok(())
    }
}

pub fn gen_data(a: GenDataArgs, common: &Common, dry: bool) -> Res<Outcome> {
    let mut r = resolver("gen-data", common, dry)?;
    let out: PathBuf = r.required("out", a.out)?;
    let mode = r.value("mode", a.mode, ScoreMode::Coupled)?;
    let n = r.value("n", a.n, 512)?;
    let seed = r.value("seed", a.seed, 0)?;
    let mut cfg = SyntheticConfig::new(mode, n, seed);
    cfg.n_object_classes = r.value("classes", a.classes, cfg.n_object_classes)?;
    cfg.n_style_words = r.value("style_words", a.style_words, cfg.n_style_words)?;
    cfg.image_side = r.value("image_side", a.image_side, cfg.image_side)?;
    cfg.patch_side = r.value("patch_side", a.patch_side, cfg.patch_side)?;
    cfg.label_noise = r.value("label_noise", a.label_noise, cfg.label_noise)?;
    cfg.aligned_prob = r.value("aligned_prob", a.aligned_prob, cfg.aligned_prob)?;
    let config = r.finish()?;
    dry_return!(dry, config);
    cfg.validate().map_err(usage)?;
    write_json(&out, "config.json", &config)?;

    let pairs = gen_synthetic(&cfg)?;
    let manifest = out.join("manifest.jsonl");
    save_manifest(&manifest, &pairs)?;
    log::info!("wrote {} pairs to {}", pairs.len(), manifest.display());
    Ok(Outcome {
        config,
        result: json!({ "manifest": manifest, "n_samples": pairs.len(), "mode": mode }),
    })
}

pub fn filter(a: FilterArgs, common: &Common, dry: bool) -> Res<Outcome> {
    let mut r = resolver("filter", common, dry)?;
    let manifest: PathBuf = r.required("manifest", a.manifest)?;
    let checkpoint: PathBuf = r.required("checkpoint", a.model.checkpoint)?;
    let meta: Option<PathBuf> = r.optional("meta", a.model.meta)?;
    let threshold = r.value("threshold", a.threshold, DEFAULT_THRESHOLD)?;
    let out: PathBuf = r.required("out", a.out)?;
    let config = r.finish()?;
    dry_return!(dry, config);
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold {threshold} outside [-1, 1]")));
    }
    write_json(&out, "config.json", &config)?;

    let data = load_data(&manifest)?;
    let model = load_model(&checkpoint, meta.as_deref())?;
    let outcome = filter_pairs(
        &data,
        |p| model.image_embedding(&p.image),
        |p| model.text_embedding(&p.prompt),
        threshold,
    )?;
    let filtered = out.join("manifest.jsonl");
    save_manifest(&filtered, &outcome.kept)?;
    let similarity: Vec<Value> = data
        .iter()
        .zip(&outcome.similarity)
        .map(|(p, s)| json!({ "id": p.id, "similarity": s }))
        .collect();
    let rejected: Vec<Value> = outcome
        .rejected
        .iter()
        .map(|(id, why)| json!({ "id": id, "reason": why }))
        .collect();
    write_json(&out, "filter_report.json", &json!({ "similarity": similarity, "rejected": rejected }))?;
    log::info!("kept {} of {} pairs", outcome.kept.len(), data.len());
    Ok(Outcome {
        config,
        result: json!({
            "manifest": filtered,
            "threshold": threshold,
            "n_input": data.len(),
            "n_kept": outcome.kept.len(),
            "rejected": rejected,
        }),
    })
}

pub fn pretrain(a: PretrainArgs, common: &Common, dry: bool) -> Res<Outcome> {
    let mut r = resolver("pretrain", common, dry)?;
    let manifest: PathBuf = r.required("manifest", a.manifest)?;
    let out: PathBuf = r.required("out", a.out)?;
    let checkpoint: Option<PathBuf> = r.optional("checkpoint", a.model.checkpoint)?;
    let meta: Option<PathBuf> = r.optional("meta", a.model.meta)?;
    let default_epochs = ProtocolConfig::preset(r.preset()).pretrain_epochs;
    let epochs = r.value("epochs", a.epochs, default_epochs)?;
    let cfg = TrainConfig {
        epochs,
        ..train_config(&mut r, a.optim)?
    };
    let save_every = r.value("save_every", a.save_every, 0)?;
    let config = r.finish()?;
    dry_return!(dry, config);
    cfg.validate().map_err(usage)?;
    let run = RunDir::create(&out)?;
    run.write_config(&config)?;

    let data = load_data(&manifest)?;
    let mut model = match &checkpoint {
        Some(c) => load_model(c, meta.as_deref())?,
        None => Model::default_for(&data, n_out(&data), cfg.seed)?,
    };
    model.save_meta(run.root())?;
    let before = mean_image2prompt_loss(&model, &data)?;
    let mut hook = save_every_hook(&run, save_every);
    let log = pretrain_image2prompt(&cfg, &mut model, &data, Some(&mut hook))?;
    let after = mean_image2prompt_loss(&model, &data)?;
    let ckpt = run.checkpoint_path(None, cfg.epochs);
    model.state.save(&ckpt)?;
    Ok(Outcome {
        config,
        result: json!({
            "checkpoint": ckpt,
            "loss_before": before,
            "loss_after": after,
            "epoch_losses": log.epoch_losses,
        }),
    })
}

pub fn train(a: TrainArgs, common: &Common, dry: bool) -> Res<Outcome> {
    let mut r = resolver("train", common, dry)?;
    let manifest: PathBuf = r.required("manifest", a.manifest)?;
    let out: PathBuf = r.required("out", a.out)?;
    let checkpoint: Option<PathBuf> = r.optional("checkpoint", a.checkpoint)?;
    let meta: Option<PathBuf> = r.optional("meta", a.meta)?;
    let preset = ProtocolConfig::preset(r.preset());
    let epochs = r.value("epochs", a.epochs, preset.train.epochs)?;
    let base = train_config(&mut r, a.optim)?;
    let use_image2prompt = r.value("use_image2prompt", a.use_image2prompt, true)?;
    let pretrain_epochs = r.value("pretrain_epochs", a.pretrain_epochs, preset.pretrain_epochs)?;
    let mode = input_mode(&mut r, a.input)?;
    let head_bias = r.value("init_head_bias", a.init_head_bias, true)?;
    let save_every = r.value("save_every", a.save_every, 0)?;
    let config = r.finish()?;
    dry_return!(dry, config);
    let cfg = TrainConfig {
        epochs,
        use_image2prompt,
        use_integral_prompt: mode.use_integral_prompt,
        use_qa_token: mode.use_qa_token,
        ..base
    };
    cfg.validate().map_err(usage)?;
    let pre_cfg = TrainConfig {
        epochs: pretrain_epochs,
        ..cfg.clone()
    };
    let pretraining = use_image2prompt && checkpoint.is_none();
    if pretraining {
        pre_cfg.validate().map_err(usage)?;
    }
    let run = RunDir::create(&out)?;
    run.write_config(&config)?;

    let data = load_data(&manifest)?;
    let mut model = match &checkpoint {
        Some(c) => load_model(c, meta.as_deref())?,
        None => Model::default_for(&data, n_out(&data), cfg.seed)?,
    };
    model.save_meta(run.root())?;
    let pre_losses = if pretraining {
        Some(pretrain_image2prompt(&pre_cfg, &mut model, &data, None)?.epoch_losses)
    } else {
        None
    };
    if head_bias {
        init_head_bias(&mut model, &data)?;
    }
    let mut hook = save_every_hook(&run, save_every);
    let log = train_perception(&cfg, &mut model, &data, Some(&mut hook))?;
    let ckpt = run.checkpoint_path(None, cfg.epochs);
    model.state.save(&ckpt)?;
    let report = evaluate(&model, mode, &data)?;
    run.write_json("reports/train.json", &report)?;
    Ok(Outcome {
        config,
        result: json!({
            "checkpoint": ckpt,
            "pretrain_losses": pre_losses,
            "epoch_losses": log.epoch_losses,
            "train_report": report,
        }),
    })
}

pub fn eval(a: EvalArgs, common: &Common, dry: bool) -> Res<Outcome> {
    let mut r = resolver("eval", common, dry)?;
    let manifest: PathBuf = r.required("manifest", a.manifest)?;
    let checkpoint: PathBuf = r.required("checkpoint", a.model.checkpoint)?;
    let meta: Option<PathBuf> = r.optional("meta", a.model.meta)?;
    let mode = input_mode(&mut r, a.input)?;
    let out: Option<PathBuf> = r.optional("out", a.out)?;
    let config = r.finish()?;
    dry_return!(dry, config);
    let run = match &out {
        Some(dir) => {
            let run = RunDir::create(dir)?;
            run.write_config(&config)?;
            Some(run)
        }
        None => None,
    };

    let data = load_data(&manifest)?;
    let model = load_model(&checkpoint, meta.as_deref())?;
    let report = evaluate(&model, mode, &data)?;
    if let Some(run) = &run {
        run.write_json("reports/eval.json", &report)?;
    }
    Ok(Outcome {
        config,
        result: serde_json::to_value(&report).map_err(anyhow::Error::from)?,
    })
}

pub fn protocol(a: ProtocolArgs, common: &Common, dry: bool) -> Res<Outcome> {
    let mut r = resolver("protocol", common, dry)?;
    let manifest: PathBuf = r.required("manifest", a.manifest)?;
    let out: PathBuf = r.required("out", a.out)?;
    let preset = ProtocolConfig::preset(r.preset());
    let repeats = r.value("repeats", a.repeats, preset.repeats)?;
    let ratio = r.value("ratio", a.ratio, preset.train_ratio)?;
    let epochs = r.value("epochs", a.epochs, preset.train.epochs)?;
    let base = train_config(&mut r, a.optim)?;
    let use_image2prompt = r.value("use_image2prompt", a.use_image2prompt, true)?;
    let pretrain_epochs = r.value("pretrain_epochs", a.pretrain_epochs, preset.pretrain_epochs)?;
    let mode = input_mode(&mut r, a.input)?;
    let jobs = r.value("jobs", a.jobs, 1)?;
    let config = r.finish()?;
    dry_return!(dry, config);
    let cfg = ProtocolConfig {
        train: TrainConfig {
            epochs,
            use_image2prompt,
            use_integral_prompt: mode.use_integral_prompt,
            use_qa_token: mode.use_qa_token,
            ..base
        },
        pretrain_epochs,
        repeats,
        train_ratio: ratio,
    };
    cfg.validate().map_err(usage)?;
    if jobs == 0 {
        return Err(CliError::Usage("jobs must be at least 1".into()));
    }
    let run = RunDir::create(&out)?;
    run.write_config(&config)?;

    let data = load_data(&manifest)?;
    let (model_cfg, vocab) = default_config(&data, n_out(&data))?;
    let report = run_protocol(&cfg, &model_cfg, &vocab, &data, Some(&run), jobs)?;
    Ok(Outcome {
        config,
        result: json!({
            "summary": run.root().join("reports/summary.json"),
            "mean": report.mean,
            "per_repeat": report.per_repeat,
        }),
    })
}

pub fn attnmap(a: AttnmapArgs, common: &Common, dry: bool) -> Res<Outcome> {
    let mut r = resolver("attnmap", common, dry)?;
    let manifest: PathBuf = r.required("manifest", a.manifest)?;
    let checkpoint: PathBuf = r.required("checkpoint", a.model.checkpoint)?;
    let meta: Option<PathBuf> = r.optional("meta", a.model.meta)?;
    let id: Option<String> = r.optional("id", a.id)?;
    let mode = input_mode(&mut r, a.input)?;
    let out: PathBuf = r.required("out", a.out)?;
    let config = r.finish()?;
    dry_return!(dry, config);
    write_json(&out, "config.json", &config)?;

    let data = load_data(&manifest)?;
    let pair = match &id {
        None => &data[0],
        Some(id) => data.iter().find(|p| &p.id == id).ok_or_else(|| {
            CliError::Runtime(anyhow::anyhow!("no sample `{id}` in {}", manifest.display()))
        })?,
    };
    let model = load_model(&checkpoint, meta.as_deref())?;
    let grid = model.cfg.image.grid_side();
    let mut files = Vec::new();
    let mut maps = Map::new();
    for (branch, m) in model.attention_maps(&pair.image, &pair.prompt, mode)? {
        files.extend(export_attention_maps(&out, branch, &m, grid)?);
        maps.insert(branch.name().into(), json!(m.to_rows()));
    }
    debug_assert_eq!(maps.len(), [Branch::Visual, Branch::Cross].len());
    Ok(Outcome {
        config,
        result: json!({ "id": pair.id, "grid_side": grid, "files": files, "maps": maps }),
    })
}
