//! Two-stage training: denoiser pretraining, then joint training of all three networks.
mod checkpoint;
mod config;
mod data;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Stage, CHECKPOINT_VERSION};
pub use config::{DataConfig, DataMode, LossConfig, RunConfig, TrainConfig, SEED_ENV};
pub use data::{pretrain_batch, training_batch, Batch, PretrainBatch, Scene, TrainingSet};
pub use optim::{clip_global_norm, cosine_lr, Adam};

use retinev_autograd::{Graph, Scope, Tensor, Var};

use crate::losses::{recon_loss, reflectance_loss, total_loss, Extractor, LossReport};
use crate::model::Model;
use crate::retinex::ClampMode;
use crate::t2i::DENOISER_PREFIX;
use crate::{Error, Result};

/// One optimizer step as seen by an [`Observer`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub stage: Stage,
    /// Completed iterations after this step.
    pub iteration: u64,
    pub lr: f64,
    pub grad_norm: f64,
    pub report: LossReport,
}

/// Receives progress; returning an error stops training.
pub trait Observer {
    fn step(&mut self, _log: &StepLog) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Collects the loss curve in memory.
#[derive(Debug, Default)]
pub struct Recorder {
    pub steps: Vec<StepLog>,
}

impl Observer for Recorder {
    fn step(&mut self, log: &StepLog) -> Result<()> {
        self.steps.push(log.clone());
        Ok(())
    }
}

fn finite_or_abort(iteration: u64, report: &LossReport, grad_norm: f64) -> Result<()> {
    if report.total.is_finite() && grad_norm.is_finite() {
        return Ok(());
    }
    Err(Error::NonFinite {
        iteration,
        detail: format!(
            "recon {} reflectance {} perceptual {} total {} grad-norm {grad_norm}",
            report.recon, report.reflectance, report.perceptual, report.total
        ),
    })
}

struct Resume {
    model: Model<f32>,
    optimizer: Adam,
    start: u64,
}

fn resume_point(cfg: &RunConfig, init: Option<Checkpoint>, stage: Stage) -> Result<Resume> {
    let hash = cfg.hash();
    let ckpt = match init {
        Some(c) => c,
        None => Checkpoint::initial(cfg.model.clone(), cfg.train.seed(), hash.clone())?,
    };
    if ckpt.stage == stage {
        ckpt.ensure_config(&hash)?;
        let optimizer = ckpt.optimizer.clone().unwrap_or_else(|| Adam::new(&ckpt.model.params));
        return Ok(Resume {
            optimizer,
            start: ckpt.iteration,
            model: ckpt.model,
        });
    }
    if ckpt.model.config() != &cfg.model {
        return Err(Error::Invalid(
            "initial checkpoint was built with a different [model] section".into(),
        ));
    }
    Ok(Resume {
        optimizer: Adam::new(&ckpt.model.params),
        start: 0,
        model: ckpt.model,
    })
}

fn snapshot(cfg: &RunConfig, stage: Stage, iteration: u64, model: &Model<f32>, opt: &Adam) -> Checkpoint {
    Checkpoint {
        config_hash: cfg.hash(),
        stage,
        iteration,
        seed: cfg.train.seed(),
        model: model.clone(),
        optimizer: Some(opt.clone()),
    }
}

fn scalar(v: Var<'_, f32>) -> f64 {
    v.value().item() as f64
}

/// Trains the denoiser to map degraded illuminance to its clean counterpart (L1).
/// `init` may be a fresh model or a pretraining checkpoint to resume.
pub fn pretrain_denoiser(
    cfg: &RunConfig,
    set: &TrainingSet,
    init: Option<Checkpoint>,
    obs: &mut dyn Observer,
) -> Result<Checkpoint> {
    cfg.validate()?;
    set.check(cfg.train.patch_size)?;
    let Resume {
        mut model,
        mut optimizer,
        start,
    } = resume_point(cfg, init, Stage::Pretrain)?;
    let total = cfg.train.iters_pretrain;
    let t = &cfg.train;
    for it in start..total {
        let batch = pretrain_batch(set, cfg, it)?;
        let g = Graph::new();
        let s = Scope::trainable(&g, &model.params);
        let x = g.constant(batch.degraded);
        let y = g.constant(batch.clean);
        let loss = model.arch.t2i.denoiser.forward(&s, x).sub(y).abs().mean();
        let l = scalar(loss);
        let mut grads = g.backward(loss);
        let mut pg = s.param_grads(&mut grads);
        let grad_norm = clip_global_norm(&mut pg, t.clip_norm);
        let report = LossReport {
            total: l,
            ..LossReport::default()
        };
        finite_or_abort(it, &report, grad_norm)?;
        let lr = cosine_lr(it, total, t.lr_main, t.lr_min);
        optimizer.update(&mut model.params, &pg, &vec![lr; pg.len()]);
        obs.step(&StepLog {
            stage: Stage::Pretrain,
            iteration: it + 1,
            lr,
            grad_norm,
            report,
        })?;
        if (it + 1) % t.checkpoint_every == 0 && it + 1 < total {
            obs.checkpoint(&snapshot(cfg, Stage::Pretrain, it + 1, &model, &optimizer))?;
        }
    }
    let done = snapshot(cfg, Stage::Pretrain, total.max(start), &model, &optimizer);
    obs.checkpoint(&done)?;
    Ok(done)
}

/// Loss terms and gradients of one main-training batch.
pub fn main_step_losses<'g>(
    model: &Model<f32>,
    s: &Scope<'g, '_, f32>,
    extractor: &Extractor<f32>,
    cfg: &RunConfig,
    batch: Batch,
) -> (Var<'g, f32>, LossReport) {
    let g = s.graph();
    let e = g.constant(batch.illuminance);
    let low = g.constant(batch.low);
    let normal = g.constant(batch.normal);
    let f = model.forward_train(s, e, low, normal, ClampMode::Leaky);
    let w = cfg.loss.weights();
    let recon = recon_loss(f.illum, f.r_hat, f.r_normal, normal);
    let refl = reflectance_loss(f.r_low, f.r_hat, f.r_normal);
    let mut total = recon.mul_scalar(w.recon as f32).add(refl.mul_scalar(w.reflectance as f32));
    let mut perceptual = 0.0;
    if w.perceptual > 0.0 {
        let p = extractor.loss(f.enhanced, normal);
        perceptual = scalar(p);
        total = total.add(p.mul_scalar(w.perceptual as f32));
    }
    let mut report = total_loss(scalar(recon), scalar(refl), perceptual, &w);
    report.total = scalar(total);
    (total, report)
}

/// Joint training of all networks. `init` is a fresh model, a pretraining checkpoint, or a
/// main-training checkpoint to resume (its config hash must match).
pub fn train_main(
    cfg: &RunConfig,
    set: &TrainingSet,
    init: Option<Checkpoint>,
    obs: &mut dyn Observer,
) -> Result<Checkpoint> {
    cfg.validate()?;
    set.check(cfg.train.patch_size)?;
    let Resume {
        mut model,
        mut optimizer,
        start,
    } = resume_point(cfg, init, Stage::Main)?;
    let extractor = Extractor::<f32>::new(cfg.loss.extractor_seed);
    let t = &cfg.train;
    let total = t.iters_main;
    let scales: Vec<f64> = model
        .params
        .iter()
        .map(|(_, name, _)| if name.starts_with(DENOISER_PREFIX) { t.lr_denoiser_scale } else { 1.0 })
        .collect();
    for it in start..total {
        let batch = training_batch(set, cfg, it)?;
        let g = Graph::new();
        let s = Scope::trainable(&g, &model.params);
        let (loss, report) = main_step_losses(&model, &s, &extractor, cfg, batch);
        let mut grads = g.backward(loss);
        let mut pg: Vec<Option<Tensor<f32>>> = s.param_grads(&mut grads);
        let grad_norm = clip_global_norm(&mut pg, t.clip_norm);
        finite_or_abort(it, &report, grad_norm)?;
        let lr = cosine_lr(it, total, t.lr_main, t.lr_min);
        let lrs: Vec<f64> = scales.iter().map(|s| s * lr).collect();
        optimizer.update(&mut model.params, &pg, &lrs);
        obs.step(&StepLog {
            stage: Stage::Main,
            iteration: it + 1,
            lr,
            grad_norm,
            report,
        })?;
        if (it + 1) % t.checkpoint_every == 0 && it + 1 < total {
            obs.checkpoint(&snapshot(cfg, Stage::Main, it + 1, &model, &optimizer))?;
        }
    }
    let done = snapshot(cfg, Stage::Main, total.max(start), &model, &optimizer);
    obs.checkpoint(&done)?;
    Ok(done)
}
