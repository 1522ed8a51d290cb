//! Training scenes and per-step batch synthesis.
use rand::Rng;
use retinev_autograd::Tensor;

use super::config::{DataMode, RunConfig};
use crate::eval::{list_images, load_paired_dataset, Layout, Split};
use crate::lldm::{synthesize_low_light, synthesize_training_sample, DegradationConfig};
use crate::nn::batch_tensor;
use crate::raster::{load_image, EncodedRaster, Raster};
use crate::rng::{self, Domain};
use crate::t2i::beta_normalize;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub high: EncodedRaster,
    /// Captured low-light counterpart; synthesized per step when absent.
    pub low: Option<EncodedRaster>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub scenes: Vec<Scene>,
}

fn rgb(e: EncodedRaster) -> Result<EncodedRaster> {
    EncodedRaster::new(e.raster().to_rgb(), e.gamma())
}

impl TrainingSet {
    /// Reads the scenes named by `cfg.data`.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let dir = d
            .train_dir
            .as_ref()
            .ok_or_else(|| Error::config("data.train_dir", "not set"))?;
        let scenes = match d.mode {
            DataMode::Paired => {
                let layout = Layout {
                    low: d.low_dir.clone(),
                    high: d.high_dir.clone(),
                };
                load_paired_dataset(dir, &layout, Split::Train)?
                    .pairs
                    .into_iter()
                    .map(|p| {
                        Ok(Scene {
                            high: rgb(load_image(&p.high)?)?,
                            low: Some(rgb(load_image(&p.low)?)?),
                            name: p.name,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            DataMode::Synthetic => {
                let high_dir = dir.join(&d.high_dir);
                list_images(&high_dir)?
                    .into_iter()
                    .map(|name| {
                        Ok(Scene {
                            high: rgb(load_image(high_dir.join(&name))?)?,
                            low: None,
                            name,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Self { scenes })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Every scene must hold at least one patch.
    pub fn check(&self, patch: usize) -> Result<()> {
        if self.scenes.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        for s in &self.scenes {
            let r = s.high.raster();
            if r.width() < patch || r.height() < patch {
                return Err(Error::Dataset(format!(
                    "{} is {}×{}, smaller than the {patch}-pixel patch",
                    s.name,
                    r.width(),
                    r.height()
                )));
            }
            if let Some(low) = &s.low {
                if !low.raster().same_size(r) {
                    return Err(Error::Dataset(format!("{}: low and high sizes differ", s.name)));
                }
            }
        }
        Ok(())
    }
}

/// `[N, C, P, P]` inputs of one main-training step.
pub struct Batch {
    /// Rescaled illuminance derived from degraded timestamps.
    pub illuminance: Tensor<f32>,
    pub low: Tensor<f32>,
    pub normal: Tensor<f32>,
}

/// Degraded and clean rescaled illuminance for denoiser pretraining.
pub struct PretrainBatch {
    pub degraded: Tensor<f32>,
    pub clean: Tensor<f32>,
}

struct View {
    scene: usize,
    x: usize,
    y: usize,
    k: u8,
}

impl View {
    fn draw(set: &TrainingSet, patch: usize, seed: u64, sample: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::Batch, sample);
        let scene = rng.random_range(0..set.len());
        let r = set.scenes[scene].high.raster();
        Self {
            scene,
            x: rng.random_range(0..=r.width() - patch),
            y: rng.random_range(0..=r.height() - patch),
            k: rng.random_range(0..8),
        }
    }

    fn apply(&self, r: &Raster, patch: usize) -> Result<Raster> {
        Ok(r.crop(self.x, self.y, patch, patch)?.dihedral(self.k))
    }
}

fn illuminance(gt: &EncodedRaster, cfg: &RunConfig, lldm: &DegradationConfig, sample: u64) -> Result<Raster> {
    let (fpe, _) = synthesize_training_sample(gt, &cfg.model.sensor, lldm, sample)?;
    Ok(beta_normalize(&fpe, 0.0)?.illuminance_input(&cfg.model.sensor))
}

/// Pretraining samples use their own index range so they never repeat main-training draws.
const PRETRAIN_OFFSET: u64 = 1 << 40;

/// Batch of step `step`, fully determined by the run seed.
pub fn training_batch(set: &TrainingSet, cfg: &RunConfig, step: u64) -> Result<Batch> {
    let (p, n) = (cfg.train.patch_size, cfg.train.batch_size);
    let seed = cfg.train.seed();
    let lldm = cfg.degradation();
    let (mut e, mut low, mut high) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n as u64 {
        let sample = step * n as u64 + i;
        let view = View::draw(set, p, seed, sample);
        let scene = &set.scenes[view.scene];
        let low_img = match &scene.low {
            Some(l) => l.clone(),
            None => {
                let mut rng = rng::stream(seed, Domain::LowLight, sample);
                synthesize_low_light(&scene.high, &cfg.data.low_light, &mut rng)?.0
            }
        };
        e.push(view.apply(&illuminance(&scene.high, cfg, &lldm, sample)?, p)?);
        low.push(view.apply(low_img.raster(), p)?);
        high.push(view.apply(scene.high.raster(), p)?);
    }
    Ok(Batch {
        illuminance: batch_tensor(&e.iter().collect::<Vec<_>>())?,
        low: batch_tensor(&low.iter().collect::<Vec<_>>())?,
        normal: batch_tensor(&high.iter().collect::<Vec<_>>())?,
    })
}

/// Pretraining batch: the full degradation model versus the clean conversion of the same patch.
pub fn pretrain_batch(set: &TrainingSet, cfg: &RunConfig, step: u64) -> Result<PretrainBatch> {
    let (p, n) = (cfg.train.patch_size, cfg.train.batch_size);
    let seed = cfg.train.seed();
    let lldm = cfg.degradation();
    let clean_cfg = DegradationConfig {
        seed,
        threshold_mu: lldm.threshold_mu,
        eps_e: lldm.eps_e,
        ..DegradationConfig::identity()
    };
    let (mut degraded, mut clean) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n as u64 {
        let sample = PRETRAIN_OFFSET + step * n as u64 + i;
        let view = View::draw(set, p, seed, sample);
        let gt = &set.scenes[view.scene].high;
        degraded.push(view.apply(&illuminance(gt, cfg, &lldm, sample)?, p)?);
        clean.push(view.apply(&illuminance(gt, cfg, &clean_cfg, sample)?, p)?);
    }
    Ok(PretrainBatch {
        degraded: batch_tensor(&degraded.iter().collect::<Vec<_>>())?,
        clean: batch_tensor(&clean.iter().collect::<Vec<_>>())?,
    })
}
