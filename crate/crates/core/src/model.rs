//! The complete enhancement network and its inference entry points.
use retinev_autograd::{Float, Graph, ParamStore, Scope, Var};
use serde::{Deserialize, Serialize};

use crate::events::{FpeMap, SensorConstants};
use crate::nn::{batch_tensor, tensor_raster, Builder};
use crate::raster::{EncodedRaster, Raster, DEFAULT_GAMMA};
use crate::retinex::{reconstruct, ClampMode, Decom, Fusion, Ire, ReflectanceMap};
use crate::rng::{self, Domain};
use crate::t2i::{beta_normalize, pad_to_multiple, IlluminationEstimate, T2i, DEFAULT_EPS_I};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub decom_width: usize,
    pub decom_layers: usize,
    pub denoiser_base: usize,
    pub mlp_hidden: usize,
    pub ire_width: usize,
    pub ire_blocks: usize,
    pub ire_heads: usize,
    pub ffn_expansion: usize,
    pub fusion: Fusion,
    pub gamma: f64,
    pub eps_i: f64,
    pub sensor: SensorConstants,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            decom_width: 32,
            decom_layers: 5,
            denoiser_base: 16,
            mlp_hidden: 16,
            ire_width: 32,
            ire_blocks: 2,
            ire_heads: 4,
            ffn_expansion: 2,
            fusion: Fusion::CrossAttention,
            gamma: DEFAULT_GAMMA,
            eps_i: DEFAULT_EPS_I,
            sensor: SensorConstants::default(),
        }
    }
}

impl ModelConfig {
    /// Reduced widths for quick CPU experiments.
    pub fn desk() -> Self {
        Self {
            decom_width: 16,
            denoiser_base: 8,
            ire_width: 16,
            ire_heads: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.decom_width", self.decom_width),
            ("model.denoiser_base", self.denoiser_base),
            ("model.mlp_hidden", self.mlp_hidden),
            ("model.ire_width", self.ire_width),
            ("model.ire_heads", self.ire_heads),
            ("model.ffn_expansion", self.ffn_expansion),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.decom_layers < 2 {
            return Err(Error::config("model.decom_layers", "must be at least 2"));
        }
        if !self.ire_width.is_multiple_of(self.ire_heads) {
            return Err(Error::config(
                "model.ire_heads",
                format!("must divide ire_width ({})", self.ire_width),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config("model.gamma", "must be positive"));
        }
        if !(self.eps_i > 0.0 && self.eps_i < 1.0) {
            return Err(Error::config("model.eps_i", "must lie in (0, 1)"));
        }
        self.sensor.validate().map_err(|e| Error::config("model.sensor", e.to_string()))
    }
}

/// Parameter layout of the three sub-networks.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub t2i: T2i,
    pub decom: Decom,
    pub ire: Ire,
}

/// Network layout plus parameter values.
#[derive(Clone, Debug)]
pub struct Model<T: Float = f32> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

/// Graph outputs of one training forward pass.
pub struct TrainForward<'g, T: Float> {
    pub illum: Var<'g, T>,
    pub r_low: Var<'g, T>,
    pub r_hat: Var<'g, T>,
    pub r_normal: Var<'g, T>,
    pub enhanced: Var<'g, T>,
}

/// Result of enhancing one image.
#[derive(Clone, Debug)]
pub struct Enhanced {
    pub illumination: IlluminationEstimate,
    pub reflectance: ReflectanceMap,
    pub image: EncodedRaster,
}

impl<T: Float> Model<T> {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng::stream(seed, Domain::Init, 0);
        let mut b = Builder::new(&mut store, &mut rng);
        let c = &config;
        let t2i = T2i::build(&mut b, c.denoiser_base, c.mlp_hidden, c.gamma, c.eps_i);
        let decom = Decom::build(&mut b, c.decom_width, c.decom_layers);
        let ire = Ire::build(&mut b, c.ire_width, c.ire_blocks, c.ire_heads, c.ffn_expansion, c.fusion);
        Ok(Self {
            arch: Architecture {
                config,
                t2i,
                decom,
                ire,
            },
            params: store.cast(),
        })
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Both branches of a training step. Inputs are `[N, C, H, W]` graph nodes: rescaled
    /// illuminance (1 channel), low-light and normal-light images (3 channels, display-encoded).
    pub fn forward_train<'g>(
        &self,
        s: &Scope<'g, '_, T>,
        illuminance: Var<'g, T>,
        low: Var<'g, T>,
        normal: Var<'g, T>,
        clamp: ClampMode,
    ) -> TrainForward<'g, T> {
        let a = &self.arch;
        let illum = a.t2i.forward(s, illuminance);
        let r_low = a.decom.forward(s, low, illum);
        let r_normal = a.decom.forward(s, normal, illum);
        let r_hat = a.ire.forward(s, r_low, illum, clamp);
        TrainForward {
            illum,
            r_low,
            r_hat,
            r_normal,
            enhanced: illum.mul(r_hat),
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.all_finite() {
            Ok(())
        } else {
            Err(Error::Invalid("model parameters contain non-finite values".into()))
        }
    }

    /// Illumination estimate for a timestamp map.
    pub fn estimate_illumination(&self, m: &FpeMap, beta: f64) -> Result<IlluminationEstimate> {
        self.check_finite()?;
        let cfg = self.config();
        let input = beta_normalize(m, beta)?.illuminance_input(&cfg.sensor);
        let padded = pad_to_multiple(&input, 4);
        let g = Graph::new();
        let s = Scope::frozen(&g, &self.params);
        let x = g.constant(batch_tensor::<T>(&[&padded])?);
        let y = tensor_raster(&self.arch.t2i.forward(&s, x).value(), 0)?;
        let y = y.crop(0, 0, m.width(), m.height())?;
        // Re-applies the floor after the f32 round trip.
        let floor = cfg.eps_i as f32;
        let data = y.data().iter().map(|&v| v.max(floor)).collect();
        IlluminationEstimate::new(Raster::new(y.width(), y.height(), 1, data)?, cfg.eps_i)
    }

    /// Reflectance of a display-encoded RGB image under the given illumination.
    pub fn decompose(&self, image: &Raster, illum: &IlluminationEstimate) -> Result<ReflectanceMap> {
        self.check_finite()?;
        check_pair(image, illum)?;
        let g = Graph::new();
        let s = Scope::frozen(&g, &self.params);
        let x = g.constant(batch_tensor::<T>(&[&image.to_rgb()])?);
        let i = g.constant(batch_tensor::<T>(&[illum.raster()])?);
        ReflectanceMap::new(tensor_raster(&self.arch.decom.forward(&s, x, i).value(), 0)?)
    }

    /// Illumination-guided refinement of a low-light reflectance.
    pub fn enhance_reflectance(&self, r_low: &ReflectanceMap, illum: &IlluminationEstimate) -> Result<ReflectanceMap> {
        self.check_finite()?;
        check_pair(r_low.raster(), illum)?;
        let g = Graph::new();
        let s = Scope::frozen(&g, &self.params);
        let r = g.constant(batch_tensor::<T>(&[r_low.raster()])?);
        let i = g.constant(batch_tensor::<T>(&[illum.raster()])?);
        let out = self.arch.ire.forward(&s, r, i, ClampMode::Hard);
        ReflectanceMap::new(tensor_raster(&out.value(), 0)?)
    }

    /// Full pipeline: events to illumination, decomposition, refinement and reconstruction.
    pub fn enhance(&self, low: &EncodedRaster, fpe: &FpeMap, beta: f64) -> Result<Enhanced> {
        let r = low.raster();
        if r.width() != fpe.width() || r.height() != fpe.height() {
            return Err(Error::Shape(format!(
                "image is {}×{} but the event map is {}×{}",
                r.width(),
                r.height(),
                fpe.width(),
                fpe.height()
            )));
        }
        let illumination = self.estimate_illumination(fpe, beta)?;
        let r_low = self.decompose(r, &illumination)?;
        let reflectance = self.enhance_reflectance(&r_low, &illumination)?;
        let image = EncodedRaster::new(reconstruct(&illumination, &reflectance)?, low.gamma())?;
        Ok(Enhanced {
            illumination,
            reflectance,
            image,
        })
    }
}

fn check_pair(image: &Raster, illum: &IlluminationEstimate) -> Result<()> {
    let i = illum.raster();
    if image.width() != i.width() || image.height() != i.height() {
        return Err(Error::Shape(format!(
            "image {}×{} vs illumination {}×{}",
            image.width(),
            image.height(),
            i.width(),
            i.height()
        )));
    }
    Ok(())
}
