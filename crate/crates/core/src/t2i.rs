//! Time-to-illumination: first-positive-event timestamps to an enhanced illumination map.
//!
//! `t_norm = (t + β)/(max t + β)`, `E = k / t_norm`, rescaled by a robust maximum, then a residual
//! denoiser, a residual pixelwise MLP and gamma encoding.
use retinev_autograd::{Float, Scope, Var};

use crate::events::{FpeMap, SensorConstants};
use crate::nn::{Builder, Conv, Init, LEAKY_SLOPE};
use crate::raster::Raster;
use crate::{Error, Result};

/// Illumination floor; keeps divisions by `Î` safe downstream.
pub const DEFAULT_EPS_I: f64 = 0.01;

/// Timestamps scaled into `(0, 1]`, the latest pixel at exactly 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedFpeMap {
    width: usize,
    height: usize,
    t: Vec<f64>,
}

impl NormalizedFpeMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    /// Illuminance `E = k / t_norm` divided by its robust maximum and clipped to `(0, 1]`,
    /// as a one-channel raster.
    ///
    /// The robust maximum is the [`ROBUST_MAX_QUANTILE`] quantile. A plain maximum is set by the
    /// single pixel with the luckiest threshold or noise draw, which scales the whole map by a
    /// random factor that no local network can undo.
    pub fn illuminance_input(&self, sensor: &SensorConstants) -> Raster {
        let k = sensor.k();
        let e: Vec<f64> = self.t.iter().map(|t| k / t).collect();
        let mut sorted = e.clone();
        let idx = ((sorted.len() - 1) as f64 * ROBUST_MAX_QUANTILE).round() as usize;
        let (_, &mut scale, _) = sorted.select_nth_unstable_by(idx, f64::total_cmp);
        let data = e.iter().map(|v| (v / scale).min(1.0) as f32).collect();
        Raster::new(self.width, self.height, 1, data).expect("rescaled illuminance lies in (0, 1]")
    }
}

/// Quantile of `E` that is mapped to 1 before denoising.
pub const ROBUST_MAX_QUANTILE: f64 = 0.98;

/// Normalizes timestamps with the brightness coefficient `beta`. Missing pixels become 1.0 (darkest).
pub fn beta_normalize(m: &FpeMap, beta: f64) -> Result<NormalizedFpeMap> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Domain(format!("beta must be finite and ≥ 0, got {beta}")));
    }
    let max = m
        .max()
        .ok_or_else(|| Error::Invalid("timestamp map has no valid pixel".into()))?;
    let denom = max + beta;
    let t = m
        .values()
        .iter()
        .map(|&t| if t.is_nan() { 1.0 } else { ((t + beta) / denom).min(1.0) })
        .collect();
    Ok(NormalizedFpeMap {
        width: m.width(),
        height: m.height(),
        t,
    })
}

/// Single-channel illumination with values in `[eps_I, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminationEstimate(Raster);

impl IlluminationEstimate {
    pub fn new(raster: Raster, eps_i: f64) -> Result<Self> {
        if raster.channels() != 1 {
            return Err(Error::Shape(format!("illumination must have 1 channel, got {}", raster.channels())));
        }
        if let Some(v) = raster.data().iter().find(|&&v| (v as f64) < eps_i as f32 as f64) {
            return Err(Error::Domain(format!("illumination value {v} below floor {eps_i}")));
        }
        Ok(Self(raster))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }
}

/// Three-scale encoder-decoder with skip connections, predicting a residual.
#[derive(Clone, Debug)]
pub struct Denoiser {
    enc: [[Conv; 2]; 3],
    dec: [[Conv; 2]; 2],
    out: Conv,
}

impl Denoiser {
    pub(crate) fn build(b: &mut Builder<'_>, base: usize) -> Self {
        let widths = [base, 2 * base, 4 * base];
        let mut enc_in = 1;
        let enc = std::array::from_fn(|i| {
            let w = widths[i];
            let pair = [
                b.conv(&format!("enc{i}a"), w, enc_in, 3, true, Init::He),
                b.conv(&format!("enc{i}b"), w, w, 3, true, Init::He),
            ];
            enc_in = w;
            pair
        });
        let dec = std::array::from_fn(|j| {
            let level = 1 - j;
            let inp = widths[level + 1] + widths[level];
            let w = widths[level];
            [
                b.conv(&format!("dec{level}a"), w, inp, 3, true, Init::He),
                b.conv(&format!("dec{level}b"), w, w, 3, true, Init::He),
            ]
        });
        let out = b.conv("out", 1, base, 3, true, Init::Zero);
        Self { enc, dec, out }
    }

    /// `x` is `[N, 1, H, W]` with `H` and `W` multiples of 4.
    pub fn forward<'g, T: Float>(&self, s: &Scope<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let slope = T::of(LEAKY_SLOPE);
        let pair = |p: &[Conv; 2], v: Var<'g, T>| p[1].apply(s, p[0].apply(s, v).leaky_relu(slope)).leaky_relu(slope);
        let e0 = pair(&self.enc[0], x);
        let e1 = pair(&self.enc[1], e0.avg_pool2());
        let e2 = pair(&self.enc[2], e1.avg_pool2());
        let d1 = pair(&self.dec[0], Var::concat_channels(&[e2.upsample2(), e1]));
        let d0 = pair(&self.dec[1], Var::concat_channels(&[d1.upsample2(), e0]));
        x.add(self.out.apply(s, d0))
    }
}

/// Residual pixelwise `1 → hidden → 1` mapping.
#[derive(Clone, Debug)]
pub struct PixelMlp {
    fc1: Conv,
    fc2: Conv,
}

impl PixelMlp {
    pub(crate) fn build(b: &mut Builder<'_>, hidden: usize) -> Self {
        Self {
            fc1: b.conv("fc1", hidden, 1, 1, true, Init::Glorot),
            fc2: b.conv("fc2", 1, hidden, 1, true, Init::Zero),
        }
    }

    pub fn forward<'g, T: Float>(&self, s: &Scope<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.add(self.fc2.apply(s, self.fc1.apply(s, x).gelu()))
    }
}

/// Learned part of the time-to-illumination module.
#[derive(Clone, Debug)]
pub struct T2i {
    pub denoiser: Denoiser,
    pub mlp: PixelMlp,
    pub gamma: f64,
    pub eps_i: f64,
}

/// Parameter-name prefix of the denoiser, which trains at a reduced rate.
pub const DENOISER_PREFIX: &str = "t2i.denoiser.";

impl T2i {
    pub(crate) fn build(b: &mut Builder<'_>, denoiser_base: usize, mlp_hidden: usize, gamma: f64, eps_i: f64) -> Self {
        b.scope("t2i", |b| T2i {
            denoiser: b.scope("denoiser", |b| Denoiser::build(b, denoiser_base)),
            mlp: b.scope("mlp", |b| PixelMlp::build(b, mlp_hidden)),
            gamma,
            eps_i,
        })
    }

    /// Rescaled illuminance `[N, 1, H, W]` to display-encoded illumination in `[eps_I, 1]`.
    pub fn forward<'g, T: Float>(&self, s: &Scope<'g, '_, T>, e: Var<'g, T>) -> Var<'g, T> {
        let y = self.mlp.forward(s, self.denoiser.forward(s, e));
        // Clamping at eps_I^γ before encoding lands exactly on eps_I afterwards.
        y.clamp(T::of(self.eps_i.powf(self.gamma)), T::one())
            .powf(T::of(1.0 / self.gamma))
            .clamp(T::of(self.eps_i), T::one())
    }
}

/// Replicate-pads a raster on the right and bottom so both sides are multiples of `m`.
pub fn pad_to_multiple(r: &Raster, m: usize) -> Raster {
    let w = r.width().div_ceil(m) * m;
    let h = r.height().div_ceil(m) * m;
    if w == r.width() && h == r.height() {
        return r.clone();
    }
    Raster::from_fn(w, h, r.channels(), |x, y, c| {
        r.get(x.min(r.width() - 1), y.min(r.height() - 1), c)
    })
    .expect("padding keeps values in range")
}
