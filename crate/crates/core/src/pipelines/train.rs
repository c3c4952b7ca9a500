use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, AdamState, InputMode, Model, TrainConfig};
use crate::data::ImagePromptPair;
use crate::encoders::{encode_image, image_global, text_global, ModelState, FUSION, HEAD, IMAGE_ENCODER, QA_EMBEDDING};
use crate::error::{Error, Result};
use crate::losses_metrics::{image2prompt_loss, regression_loss};
use crate::numerics::{Graph, Tensor, Var};

/// Called after every epoch with the 1-based epoch, the current parameters
/// and that epoch's mean training loss.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &ModelState, f64) -> Result<()>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    /// Mean per-sample training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

fn check_run(cfg: &TrainConfig, data: &[ImagePromptPair]) -> Result<()> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be positive".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {} is negative or not finite", cfg.lr)));
    }
    if data.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    Ok(())
}

/// Shared minibatch loop. `sample_loss` builds one pair's loss in the batch graph.
fn run_epochs<F>(
    cfg: &TrainConfig,
    model: &mut Model,
    n: usize,
    stream: u64,
    mut hook: Option<EpochHook>,
    mut sample_loss: F,
) -> Result<TrainLog>
where
    F: FnMut(&Model, &mut Graph, &crate::encoders::ModelVars, &mut HashMap<String, Var>, usize) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n).collect();
    let mut opt = AdamState::new();
    let mut log = TrainLog::default();
    model.state.clear_grads();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let bound = model.state.bind(&mut g, &model.cfg, false)?;
            let mut text_memo = HashMap::new();
            let mut sum: Option<Var> = None;
            for &i in batch {
                let l = sample_loss(model, &mut g, &bound.model, &mut text_memo, i)?;
                total += g.value(l).data()[0];
                sum = Some(match sum {
                    None => l,
                    Some(s) => g.add(s, l)?,
                });
            }
            let loss = g.scale(sum.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
            g.backward(loss)?;
            model.state.accumulate_grads(&g, &bound);
            adam_step(&mut model.state, &mut opt, cfg.lr)?;
            log.steps += 1;
        }
        let mean = total / n as f64;
        log.epoch_losses.push(mean);
        log::info!("epoch {epoch}/{}: mean loss {mean:.6}", cfg.epochs);
        if let Some(h) = hook.as_mut() {
            h(epoch, &model.state, mean)?;
        }
    }
    Ok(log)
}

/// Image2Prompt: pulls the image embedding towards the frozen `[eot]`
/// prompt embedding with `1 - cos`. Only the image encoder and fusion
/// groups train.
pub fn pretrain_image2prompt(
    cfg: &TrainConfig,
    model: &mut Model,
    data: &[ImagePromptPair],
    hook: Option<EpochHook>,
) -> Result<TrainLog> {
    check_run(cfg, data)?;
    model.state.train_only(&[IMAGE_ENCODER, FUSION])?;
    let prompts: Vec<&str> = data.iter().map(|p| p.prompt.as_str()).collect();
    let cache = model.text_globals(&prompts, InputMode::PRETRAIN)?;
    run_epochs(cfg, model, data.len(), 1, hook, |model, g, m, _, i| {
        let ev = encode_image(g, m, &model.cfg.image, &data[i].image)?;
        let e_img = image_global(g, m, ev)?;
        let e_txt = g.constant(cache[&data[i].prompt].clone());
        image2prompt_loss(g, e_img, e_txt)
    })
}

/// Per-pair Image2Prompt loss under the current parameters.
pub fn image2prompt_losses(model: &Model, data: &[ImagePromptPair]) -> Result<Vec<f64>> {
    let prompts: Vec<&str> = data.iter().map(|p| p.prompt.as_str()).collect();
    let cache = model.text_globals(&prompts, InputMode::PRETRAIN)?;
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(32) {
        let mut g = Graph::new();
        let bound = model.state.bind(&mut g, &model.cfg, false)?;
        for p in chunk {
            let ev = encode_image(&mut g, &bound.model, &model.cfg.image, &p.image)?;
            let e_img = image_global(&mut g, &bound.model, ev)?;
            let e_txt = g.constant(cache[&p.prompt].clone());
            let l = image2prompt_loss(&mut g, e_img, e_txt)?;
            out.push(g.value(l).data()[0]);
        }
    }
    Ok(out)
}

pub fn mean_image2prompt_loss(model: &Model, data: &[ImagePromptPair]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("no pairs".into()));
    }
    let l = image2prompt_losses(model, data)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

fn check_arity(model: &Model, data: &[ImagePromptPair]) -> Result<()> {
    for p in data {
        let n = p.targets().len();
        if n != model.cfg.n_out {
            return Err(Error::Config(format!(
                "pair `{}` has {n} score(s) but the head predicts {}",
                p.id, model.cfg.n_out
            )));
        }
    }
    Ok(())
}

/// Sets the score-head bias to the mean training target of each head.
pub fn init_head_bias(model: &mut Model, data: &[ImagePromptPair]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("no pairs".into()));
    }
    check_arity(model, data)?;
    let mut mean = vec![0.0; model.cfg.n_out];
    for p in data {
        for (m, t) in mean.iter_mut().zip(p.targets()) {
            *m += t / data.len() as f64;
        }
    }
    *model.state.param_mut(HEAD, "bias")? = Tensor::vector(mean)?;
    Ok(())
}

/// MSE regression onto the MOS targets. The text encoder stays frozen; the
/// `[qa]` row trains only when the config uses it.
pub fn train_perception(
    cfg: &TrainConfig,
    model: &mut Model,
    data: &[ImagePromptPair],
    hook: Option<EpochHook>,
) -> Result<TrainLog> {
    check_run(cfg, data)?;
    check_arity(model, data)?;
    if cfg.use_qa_token {
        model.state.train_only(&[IMAGE_ENCODER, QA_EMBEDDING, FUSION, HEAD])?;
    } else {
        model.state.train_only(&[IMAGE_ENCODER, FUSION, HEAD])?;
    }
    let mode = cfg.input_mode();
    let cache = if model.text_is_constant(mode.terminal())? {
        let prompts: Vec<&str> = data.iter().map(|p| p.prompt.as_str()).collect();
        Some(model.text_globals(&prompts, mode)?)
    } else {
        None
    };
    let seqs = data
        .iter()
        .map(|p| model.sequence(&p.prompt, mode))
        .collect::<Result<Vec<_>>>()?;
    let targets = data
        .iter()
        .map(|p| Tensor::vector(p.targets()))
        .collect::<Result<Vec<_>>>()?;
    run_epochs(cfg, model, data.len(), 2, hook, |model, g, m, memo, i| {
        let key = mode.prompt_text(&data[i].prompt);
        let gt = match (&cache, memo.get(key)) {
            (Some(c), _) => g.constant(c[key].clone()),
            (None, Some(&v)) => v,
            (None, None) => {
                let v = text_global(g, m, &model.cfg.text, &seqs[i])?;
                memo.insert(key.to_string(), v);
                v
            }
        };
        let s = model.scores(g, m, &data[i].image, gt)?;
        let t = g.constant(targets[i].clone());
        regression_loss(g, s, t)
    })
}
