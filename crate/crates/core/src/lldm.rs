//! Low-light degradation model used to synthesize training inputs.
//!
//! Spatial stage (on the linear ground truth): Gaussian blur, down/up-sampling and
//! Poisson-Gaussian noise. Temporal stage (on the timestamp map): latency growing with the
//! timestamp, dead pixels more likely at late timestamps, and per-pixel contrast-threshold
//! variation. Stages within a domain run in a randomly shuffled order.
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::events::{simulate_fpe_map, FpeMap, SensorConstants, ThresholdField, DEFAULT_EPS_E, MISSING};
use crate::raster::{gamma_decode, gamma_encode, EncodedRaster, LinearRaster, Raster};
use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Closed interval `[low, high]` that parameters are drawn from uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl Span {
    pub fn fixed(v: f64) -> Self {
        Span(v, v)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }

    fn validate(&self, field: &str, min: f64) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite()) || self.0 > self.1 {
            return Err(Error::config(field, format!("range [{}, {}] is not ordered", self.0, self.1)));
        }
        if self.0 < min {
            return Err(Error::config(field, format!("lower bound must be ≥ {min}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    /// Gaussian blur standard deviation, pixels.
    pub blur_sigma: Span,
    /// Down-then-up resampling factor, ≥ 1.
    pub downsample_factor: Span,
    /// Photons per unit intensity for shot noise; 0 disables it.
    pub poisson_scale: Span,
    /// Additive Gaussian noise standard deviation.
    pub gauss_sigma: Span,
    /// Latency coefficient α in `t' = t·(1 + α·t/t_max)`.
    pub latency_alpha: Span,
    /// Dead-pixel probability at the largest timestamp.
    pub dead_pixel_max_prob: f64,
    pub threshold_mu: f64,
    pub threshold_sigma: f64,
    /// Luminance floor keeping timestamps finite on black pixels.
    pub eps_e: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self::training()
    }
}

impl DegradationConfig {
    /// Contrast thresholds `N(0.2, 0.03)`.
    pub fn training() -> Self {
        Self {
            blur_sigma: Span(0.0, 1.5),
            downsample_factor: Span(1.0, 2.0),
            poisson_scale: Span(50.0, 500.0),
            gauss_sigma: Span(0.0, 0.03),
            latency_alpha: Span(0.0, 0.2),
            dead_pixel_max_prob: 0.05,
            threshold_mu: 0.2,
            threshold_sigma: 0.03,
            eps_e: DEFAULT_EPS_E,
            seed: 0,
        }
    }

    /// Contrast thresholds `N(0.2, 0.05)`.
    pub fn testing() -> Self {
        Self {
            threshold_sigma: 0.05,
            ..Self::training()
        }
    }

    /// Every stage disabled; thresholds fixed at `threshold_mu`.
    pub fn identity() -> Self {
        Self {
            blur_sigma: Span::fixed(0.0),
            downsample_factor: Span::fixed(1.0),
            poisson_scale: Span::fixed(0.0),
            gauss_sigma: Span::fixed(0.0),
            latency_alpha: Span::fixed(0.0),
            dead_pixel_max_prob: 0.0,
            threshold_sigma: 0.0,
            ..Self::training()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.blur_sigma.validate("lldm.blur_sigma", 0.0)?;
        self.downsample_factor.validate("lldm.downsample_factor", 1.0)?;
        self.poisson_scale.validate("lldm.poisson_scale", 0.0)?;
        self.gauss_sigma.validate("lldm.gauss_sigma", 0.0)?;
        self.latency_alpha.validate("lldm.latency_alpha", 0.0)?;
        if !(0.0..=1.0).contains(&self.dead_pixel_max_prob) {
            return Err(Error::config("lldm.dead_pixel_max_prob", "must lie in [0, 1]"));
        }
        if !(self.threshold_mu.is_finite() && self.threshold_mu > 0.0) {
            return Err(Error::config("lldm.threshold_mu", "must be positive"));
        }
        if !(self.threshold_sigma.is_finite() && self.threshold_sigma >= 0.0) {
            return Err(Error::config("lldm.threshold_sigma", "must be non-negative"));
        }
        if !(self.eps_e.is_finite() && self.eps_e > 0.0) {
            return Err(Error::config("lldm.eps_e", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum SpatialStep {
    Blur(f64),
    Resample(f64),
    Noise { photons: f64, sigma: f64 },
}

#[derive(Clone, Copy, Debug)]
enum TemporalStep {
    Latency(f64),
    DeadPixels,
    ThresholdJitter,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(r: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return r.clone();
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let (w, h, c) = (r.width(), r.height(), r.channels());
    let src = r.data();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * src[(y * w + sx) * c + ch] as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    Raster::clamped(w, h, c, out).expect("blur keeps values finite")
}

/// Bilinear resize with pixel-centre alignment.
pub fn resize_bilinear(r: &Raster, width: usize, height: usize) -> Raster {
    let (w, h, c) = (r.width(), r.height(), r.channels());
    let sx = w as f64 / width as f64;
    let sy = h as f64 / height as f64;
    let src = r.data();
    let mut out = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let at = |xx: usize, yy: usize| src[(yy * w + xx) * c + ch] as f64;
                let top = at(x0, y0) * (1.0 - wx) + at(x1, y0) * wx;
                let bot = at(x0, y1) * (1.0 - wx) + at(x1, y1) * wx;
                out.push((top * (1.0 - wy) + bot * wy) as f32);
            }
        }
    }
    Raster::clamped(width, height, c, out).expect("bilinear keeps values finite")
}

/// `y = Poisson(x·photons)/photons + N(0, sigma²)`, clamped to `[0, 1]`.
pub fn poisson_gaussian(r: &Raster, photons: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Raster {
    let gauss = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("positive sigma"));
    let data = r
        .data()
        .iter()
        .map(|&v| {
            let mut y = v as f64;
            if photons > 0.0 {
                let lambda = y * photons;
                y = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(rng) / photons
                } else {
                    0.0
                };
            }
            if let Some(g) = &gauss {
                y += g.sample(rng);
            }
            y.clamp(0.0, 1.0) as f32
        })
        .collect();
    Raster::new(r.width(), r.height(), r.channels(), data).expect("clamped noise output")
}

/// Spatial-domain degradation of a linear ground truth.
pub fn degrade_spatial(gt: &LinearRaster, cfg: &DegradationConfig, rng: &mut ChaCha8Rng) -> LinearRaster {
    let sigma = cfg.blur_sigma.sample(rng);
    let factor = cfg.downsample_factor.sample(rng);
    let photons = cfg.poisson_scale.sample(rng);
    let noise = cfg.gauss_sigma.sample(rng);
    let mut steps = [
        SpatialStep::Blur(sigma),
        SpatialStep::Resample(factor),
        SpatialStep::Noise { photons, sigma: noise },
    ];
    steps.shuffle(rng);
    let mut img = gt.0.clone();
    for step in steps {
        match step {
            SpatialStep::Blur(s) if s > 0.0 => img = gaussian_blur(&img, s),
            SpatialStep::Resample(f) => {
                let (w, h) = (img.width(), img.height());
                let sw = ((w as f64 / f).round() as usize).max(1);
                let sh = ((h as f64 / f).round() as usize).max(1);
                if sw != w || sh != h {
                    img = resize_bilinear(&resize_bilinear(&img, sw, sh), w, h);
                }
            }
            SpatialStep::Noise { photons, sigma } if photons > 0.0 || sigma > 0.0 => {
                img = poisson_gaussian(&img, photons, sigma, rng)
            }
            _ => {}
        }
    }
    LinearRaster(img)
}

fn truncated_normal(mu: f64, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    let dist = Normal::new(mu, sigma).expect("finite threshold distribution");
    (0..64).map(|_| dist.sample(rng)).find(|&c| c > 0.0).unwrap_or(mu)
}

/// Temporal-domain degradation of a timestamp map.
pub fn degrade_temporal(m: &FpeMap, cfg: &DegradationConfig, rng: &mut ChaCha8Rng) -> FpeMap {
    let alpha = cfg.latency_alpha.sample(rng);
    let mut steps = [
        TemporalStep::Latency(alpha),
        TemporalStep::DeadPixels,
        TemporalStep::ThresholdJitter,
    ];
    steps.shuffle(rng);
    let mut t = m.values().to_vec();
    let max_of = |t: &[f64]| t.iter().copied().filter(|v| !v.is_nan()).reduce(f64::max);
    for step in steps {
        let Some(t_max) = max_of(&t) else { break };
        match step {
            TemporalStep::Latency(a) if a > 0.0 => {
                for v in t.iter_mut().filter(|v| !v.is_nan()) {
                    *v *= 1.0 + a * *v / t_max;
                }
            }
            TemporalStep::DeadPixels if cfg.dead_pixel_max_prob > 0.0 => {
                for v in t.iter_mut().filter(|v| !v.is_nan()) {
                    let p = (cfg.dead_pixel_max_prob * *v / t_max).min(1.0);
                    if rng.random::<f64>() < p {
                        *v = MISSING;
                    }
                }
            }
            TemporalStep::ThresholdJitter if cfg.threshold_sigma > 0.0 => {
                for v in t.iter_mut().filter(|v| !v.is_nan()) {
                    *v *= truncated_normal(cfg.threshold_mu, cfg.threshold_sigma, rng) / cfg.threshold_mu;
                }
            }
            _ => {}
        }
    }
    FpeMap::new(m.width(), m.height(), t).expect("degradation keeps timestamps positive")
}

/// Degraded timestamp map for a display-encoded ground truth, plus the clean linear ground truth.
/// Deterministic in `(cfg.seed, sample_index)`.
pub fn synthesize_training_sample(
    gt: &EncodedRaster,
    sensor: &SensorConstants,
    cfg: &DegradationConfig,
    sample_index: u64,
) -> Result<(FpeMap, LinearRaster)> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, Domain::Degradation, sample_index);
    let linear = gamma_decode(gt);
    let degraded = degrade_spatial(&linear, cfg, &mut rng);
    // Thresholds start at the nominal value; the jitter stage draws the per-pixel variation.
    let nominal = ThresholdField::uniform(gt.raster().width(), gt.raster().height(), cfg.threshold_mu)?;
    let clean_map = simulate_fpe_map(&degraded, sensor, &nominal, cfg.eps_e)?;
    Ok((degrade_temporal(&clean_map, cfg, &mut rng), linear))
}

/// Under-exposure used to fabricate low-light inputs when no paired capture exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowLightConfig {
    /// Exposure multiplier applied to the linear ground truth.
    pub exposure: Span,
    /// Photons per unit intensity before under-exposure.
    pub photons: Span,
    pub read_noise: Span,
}

impl Default for LowLightConfig {
    fn default() -> Self {
        Self {
            exposure: Span(0.05, 0.3),
            photons: Span(500.0, 2000.0),
            read_noise: Span(0.0, 0.01),
        }
    }
}

impl LowLightConfig {
    pub fn validate(&self) -> Result<()> {
        self.exposure.validate("data.low_light.exposure", 0.0)?;
        if self.exposure.1 > 1.0 {
            return Err(Error::config("data.low_light.exposure", "must not brighten (upper bound ≤ 1)"));
        }
        self.photons.validate("data.low_light.photons", 0.0)?;
        self.read_noise.validate("data.low_light.read_noise", 0.0)
    }
}

/// Darkened, noisy counterpart of a display-encoded image. Returns the image and the exposure used.
pub fn synthesize_low_light(
    gt: &EncodedRaster,
    cfg: &LowLightConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(EncodedRaster, f64)> {
    let exposure = cfg.exposure.sample(rng);
    let photons = cfg.photons.sample(rng);
    let read = cfg.read_noise.sample(rng);
    let lin = gamma_decode(gt);
    let dim = lin.0.data().iter().map(|&v| v * exposure as f32).collect();
    let dim = Raster::new(lin.0.width(), lin.0.height(), lin.0.channels(), dim)?;
    let noisy = poisson_gaussian(&dim, photons, read, rng);
    Ok((gamma_encode(&LinearRaster(noisy), gt.gamma())?, exposure))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, c: usize) -> Raster {
        Raster::from_fn(w, h, c, |x, y, ch| ((x + 2 * y + ch) % 17) as f32 / 16.0).unwrap()
    }

    #[test]
    fn identity_spatial_is_bit_exact() {
        let gt = LinearRaster(ramp(9, 7, 3));
        let mut rng = rng::stream(1, Domain::Degradation, 0);
        assert_eq!(degrade_spatial(&gt, &DegradationConfig::identity(), &mut rng), gt);
    }

    #[test]
    fn blur_conserves_mass_of_a_delta() {
        let mut d = vec![0.0f32; 31 * 31];
        d[15 * 31 + 15] = 1.0;
        let r = Raster::new(31, 31, 1, d).unwrap();
        for sigma in [0.5, 1.0, 1.5] {
            let b = gaussian_blur(&r, sigma);
            let mass: f64 = b.data().iter().map(|&v| v as f64).sum();
            assert!((mass - 1.0).abs() < 1e-3, "sigma {sigma}: mass {mass}");
            assert!(b.get(15, 15, 0) < 1.0);
        }
    }

    #[test]
    fn spatial_degradation_is_seeded() {
        let gt = LinearRaster(ramp(16, 16, 3));
        let cfg = DegradationConfig::training();
        let a = degrade_spatial(&gt, &cfg, &mut rng::stream(5, Domain::Degradation, 2));
        let b = degrade_spatial(&gt, &cfg, &mut rng::stream(5, Domain::Degradation, 2));
        let c = degrade_spatial(&gt, &cfg, &mut rng::stream(5, Domain::Degradation, 3));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_temporal_is_noop() {
        let m = FpeMap::new(3, 1, vec![1.0, MISSING, 4.0]).unwrap();
        let mut rng = rng::stream(0, Domain::Degradation, 0);
        assert_eq!(degrade_temporal(&m, &DegradationConfig::identity(), &mut rng), m);
    }

    #[test]
    fn latency_grows_with_timestamp() {
        let cfg = DegradationConfig {
            latency_alpha: Span::fixed(0.2),
            ..DegradationConfig::identity()
        };
        let m = FpeMap::new(2, 1, vec![1.0, 3.0]).unwrap();
        let out = degrade_temporal(&m, &cfg, &mut rng::stream(0, Domain::Degradation, 0));
        let (a, b) = (out.values()[0], out.values()[1]);
        assert!(a < b);
        assert!(b - 3.0 > a - 1.0);
        assert!(a >= 1.0);
    }

    #[test]
    fn dead_pixel_rate_at_max_timestamp() {
        let cfg = DegradationConfig {
            dead_pixel_max_prob: 0.5,
            ..DegradationConfig::identity()
        };
        let n = 100_000;
        let m = FpeMap::new(n, 1, vec![2.0; n]).unwrap();
        let out = degrade_temporal(&m, &cfg, &mut rng::stream(11, Domain::Degradation, 0));
        let rate = out.missing_count() as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn identity_sample_matches_physics() {
        let gt = EncodedRaster::new(ramp(8, 8, 3), 2.2).unwrap();
        let cfg = DegradationConfig::identity();
        let sensor = SensorConstants::default();
        let (m, lin) = synthesize_training_sample(&gt, &sensor, &cfg, 4).unwrap();
        let lum = lin.0.luminance();
        for (t, l) in m.values().iter().zip(lum.data()) {
            assert_eq!(*t, sensor.k() * cfg.threshold_mu / (*l as f64).max(cfg.eps_e));
        }
    }

    #[test]
    fn default_threshold_distributions() {
        assert_eq!((DegradationConfig::training().threshold_mu, DegradationConfig::training().threshold_sigma), (0.2, 0.03));
        assert_eq!((DegradationConfig::testing().threshold_mu, DegradationConfig::testing().threshold_sigma), (0.2, 0.05));
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = DegradationConfig {
            blur_sigma: Span(2.0, 1.0),
            ..DegradationConfig::training()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("lldm.blur_sigma"), "{err}");
    }

    #[test]
    fn low_light_is_darker() {
        let gt = EncodedRaster::new(ramp(16, 16, 3), 2.2).unwrap();
        let mut rng = rng::stream(3, Domain::LowLight, 0);
        let (low, exposure) = synthesize_low_light(&gt, &LowLightConfig::default(), &mut rng).unwrap();
        assert!((0.05..=0.3).contains(&exposure));
        assert!(low.raster().mean() < gt.raster().mean());
    }
}
