//! Layer building blocks shared by the networks.
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use retinev_autograd::{Float, ParamId, ParamStore, Scope, Tensor, Var};

use crate::raster::Raster;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Normal with std `sqrt(2 / fan_in)`, for layers followed by a rectifier.
    He,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Zero,
}

/// Registers parameters under a dotted name prefix.
pub(crate) struct Builder<'a> {
    store: &'a mut ParamStore<f64>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f64>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_>) -> R) -> R {
        let prefix = format!("{}{name}.", self.prefix);
        let mut sub = Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        };
        f(&mut sub)
    }

    pub fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize, bias: bool, init: Init) -> Conv {
        let fan_in = (inp * k * k) as f64;
        let fan_out = (out * k * k) as f64;
        let n = out * inp * k * k;
        let data: Vec<f64> = match init {
            Init::He => {
                let d = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
                (0..n).map(|_| d.sample(self.rng)).collect()
            }
            Init::Glorot => {
                let b = (6.0 / (fan_in + fan_out)).sqrt();
                (0..n).map(|_| self.rng.random_range(-b..=b)).collect()
            }
            Init::Zero => vec![0.0; n],
        };
        let w = self
            .store
            .add(format!("{}{name}.weight", self.prefix), Tensor::new(&[out, inp, k, k], data));
        let b = bias.then(|| self.vector(&format!("{name}.bias"), out, 0.0));
        Conv { w, b }
    }

    pub fn vector(&mut self, name: &str, len: usize, value: f64) -> ParamId {
        self.store
            .add(format!("{}{name}", self.prefix), Tensor::full(&[len], value))
    }

    pub fn layer_norm(&mut self, name: &str, channels: usize) -> LayerNorm {
        LayerNorm {
            gamma: self.vector(&format!("{name}.gamma"), channels, 1.0),
            beta: self.vector(&format!("{name}.beta"), channels, 0.0),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Conv {
    pub fn apply<'g, T: Float>(&self, s: &Scope<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.conv2d(s.param(self.w), self.b.map(|b| s.param(b)))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn apply<'g, T: Float>(&self, s: &Scope<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.layer_norm_channels(s.param(self.gamma), s.param(self.beta), LN_EPS)
    }
}

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

/// Stacks equally sized rasters into an `[N, C, H, W]` tensor.
pub fn batch_tensor<T: Float>(rasters: &[&Raster]) -> Result<Tensor<T>> {
    let first = rasters
        .first()
        .ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (w, h, c) = (first.width(), first.height(), first.channels());
    let mut data = Vec::with_capacity(rasters.len() * w * h * c);
    for r in rasters {
        if r.width() != w || r.height() != h || r.channels() != c {
            return Err(Error::Shape(format!(
                "batch mixes {}×{}×{} with {w}×{h}×{c}",
                r.width(),
                r.height(),
                r.channels()
            )));
        }
        data.extend(r.to_planar().into_iter().map(|v| T::of(v as f64)));
    }
    Ok(Tensor::new(&[rasters.len(), c, h, w], data))
}

/// Batch element `index` of an `[N, C, H, W]` tensor as a raster (values clamped to `[0, 1]`).
pub fn tensor_raster<T: Float>(t: &Tensor<T>, index: usize) -> Result<Raster> {
    let (_, c, h, w) = t.dims4();
    let len = c * h * w;
    let planar: Vec<f32> = t.data()[index * len..(index + 1) * len]
        .iter()
        .map(|v| v.as_f64() as f32)
        .collect();
    Raster::from_planar(w, h, c, &planar)
}
