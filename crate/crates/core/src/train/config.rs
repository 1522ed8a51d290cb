//! Run configuration: one TOML file with `[data]`, `[lldm]`, `[model]`, `[loss]` and `[train]`.
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lldm::{DegradationConfig, LowLightConfig};
use crate::losses::{LossWeights, DEFAULT_EXTRACTOR_SEED};
use crate::model::ModelConfig;
use crate::{Error, Result};

/// Where low-light training inputs come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Real pairs from `low/` next to `high/`.
    Paired,
    /// Ground truth darkened on the fly with [`LowLightConfig`].
    #[default]
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory containing `high/` (and `low/` in paired mode).
    pub train_dir: Option<PathBuf>,
    pub mode: DataMode,
    pub low_dir: String,
    pub high_dir: String,
    pub low_light: LowLightConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            mode: DataMode::Synthetic,
            low_dir: "low".into(),
            high_dir: "high".into(),
            low_light: LowLightConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub recon: f64,
    pub reflectance: f64,
    pub perceptual: f64,
    /// Seed of the fixed random feature pyramid used by the perceptual term.
    pub extractor_seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            recon: w.recon,
            reflectance: w.reflectance,
            perceptual: w.perceptual,
            extractor_seed: DEFAULT_EXTRACTOR_SEED,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            recon: self.recon,
            reflectance: self.reflectance,
            perceptual: self.perceptual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub iters_pretrain: u64,
    pub iters_main: u64,
    pub lr_main: f64,
    pub lr_min: f64,
    /// Learning-rate multiplier of the denoiser during main training.
    pub lr_denoiser_scale: f64,
    /// Global gradient-norm limit.
    pub clip_norm: f64,
    /// Unset means: `RETINEV_SEED`, else 0.
    pub seed: Option<u64>,
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            batch_size: 8,
            iters_pretrain: 2000,
            iters_main: 2000,
            lr_main: 2e-4,
            lr_min: 1e-7,
            lr_denoiser_scale: 0.1,
            clip_norm: 1.0,
            seed: None,
            checkpoint_every: 500,
            out_dir: PathBuf::from("runs/retinev"),
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: 128² patches, batch 32, 100k pretraining and 150k main iterations.
    pub fn full_scale() -> Self {
        Self {
            patch_size: 128,
            batch_size: 32,
            iters_pretrain: 100_000,
            iters_main: 150_000,
            ..Self::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 || !self.patch_size.is_multiple_of(4) {
            return Err(Error::config("train.patch_size", "must be a multiple of 4 and at least 8"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.lr_min.is_finite() && self.lr_min > 0.0) {
            return Err(Error::config("train.lr_min", "must be positive"));
        }
        if !(self.lr_main.is_finite() && self.lr_main > self.lr_min) {
            return Err(Error::config("train.lr_main", "must exceed train.lr_min"));
        }
        if !(self.lr_denoiser_scale > 0.0 && self.lr_denoiser_scale <= 1.0) {
            return Err(Error::config("train.lr_denoiser_scale", "must lie in (0, 1]"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::config("train.clip_norm", "must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("train.checkpoint_every", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub lldm: DegradationConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "RETINEV_SEED";

impl RunConfig {
    /// Small model and schedule suited to a CPU.
    /// Small model and short schedule for single-core CPU runs. The 2k-iteration budget is far
    /// too short for the full-scale rate, so the rate is raised tenfold.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig {
                iters_pretrain: 500,
                lr_main: 2e-3,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".into());
            Error::config(field, e.to_string().trim().to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Fills an unset seed from `env_seed` (the value of [`SEED_ENV`], if any).
    pub fn apply_env_seed(&mut self, env_seed: Option<&str>) -> Result<()> {
        if self.train.seed.is_none() {
            if let Some(v) = env_seed {
                let seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
                self.train.seed = Some(seed);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.low_light.validate()?;
        self.lldm.validate()?;
        self.model.validate()?;
        self.loss.weights().validate()?;
        self.train.validate()?;
        if self.data.mode == DataMode::Paired && self.data.train_dir.is_none() {
            return Err(Error::config("data.train_dir", "paired mode needs a training directory"));
        }
        Ok(())
    }

    /// Degradation settings with the run seed.
    pub fn degradation(&self) -> DegradationConfig {
        DegradationConfig {
            seed: self.train.seed(),
            ..self.lldm.clone()
        }
    }

    /// Hex SHA-256 of every setting that influences the trained weights. Paths and checkpoint
    /// cadence are excluded so a run can move or change how often it saves.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            mode: DataMode,
            low_light: &'a LowLightConfig,
            lldm: &'a DegradationConfig,
            model: &'a ModelConfig,
            loss: &'a LossConfig,
            train: TrainConfig,
        }
        let train = TrainConfig {
            seed: Some(self.train.seed()),
            checkpoint_every: 0,
            out_dir: PathBuf::new(),
            ..self.train.clone()
        };
        let json = serde_json::to_vec(&Hashed {
            mode: self.data.mode,
            low_light: &self.data.low_light,
            lldm: &self.lldm,
            model: &self.model,
            loss: &self.loss,
            train,
        })
        .expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
