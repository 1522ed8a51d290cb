//! Image rasters, gamma transfer and PNG I/O.
//!
//! Pixel data is stored row-major with interleaved channels (`HWC`), values in `[0, 1]`.
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 2.2;

/// Relative-luminance weights for RGB.
pub const LUMA_WEIGHTS: [f32; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Invalid(format!("raster must have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} values for a {width}×{height}×{channels} raster",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Invalid(format!("raster value {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Like [`Raster::new`] but clamps finite out-of-range values into `[0, 1]`.
    pub fn clamped(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite raster value".into()));
        }
        let outside = data.iter().filter(|v| **v < 0.0 || **v > 1.0).count();
        if outside > 0 {
            log::warn!("clamping {outside} raster values into [0, 1]");
            data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds a raster from a per-pixel closure returning `channels` values.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_size(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Single-channel relative luminance; a 1-channel raster is returned unchanged.
    pub fn luminance(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks(3)
            .map(|p| (LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]).clamp(0.0, 1.0))
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Raster> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}×{height}+{x0}+{y0} exceeds {}×{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Ok(Raster {
            width,
            height,
            channels: c,
            data,
        })
    }

    /// Applies one of the 8 square symmetries (`0..8`: rotation by `k % 4` quarter turns, then a
    /// horizontal flip when `k >= 4`). Non-square rasters only accept even rotations.
    pub fn dihedral(&self, k: u8) -> Raster {
        let (w, h, c) = (self.width, self.height, self.channels);
        let rot = k % 4;
        let flip = k >= 4;
        let (ow, oh) = if rot % 2 == 1 { (h, w) } else { (w, h) };
        let mut data = vec![0.0; self.data.len()];
        for oy in 0..oh {
            for ox in 0..ow {
                let fx = if flip { ow - 1 - ox } else { ox };
                let (sx, sy) = match rot {
                    0 => (fx, oy),
                    1 => (oy, h - 1 - fx),
                    2 => (w - 1 - fx, h - 1 - oy),
                    _ => (w - 1 - oy, fx),
                };
                let src = (sy * w + sx) * c;
                let dst = (oy * ow + ox) * c;
                data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Raster {
            width: ow,
            height: oh,
            channels: c,
            data,
        }
    }

    /// Channel-planar copy (`CHW`).
    pub fn to_planar(&self) -> Vec<f32> {
        let hw = self.width * self.height;
        let mut out = vec![0.0; self.data.len()];
        for (p, px) in self.data.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * hw + p] = v;
            }
        }
        out
    }

    /// Inverse of [`Raster::to_planar`]; out-of-range values are clamped.
    pub fn from_planar(width: usize, height: usize, channels: usize, planar: &[f32]) -> Result<Raster> {
        let hw = width * height;
        if planar.len() != hw * channels {
            return Err(Error::Shape(format!(
                "{} planar values for {width}×{height}×{channels}",
                planar.len()
            )));
        }
        let mut data = vec![0.0; planar.len()];
        for p in 0..hw {
            for c in 0..channels {
                data[p * channels + c] = planar[c * hw + p];
            }
        }
        Raster::clamped(width, height, channels, data)
    }

    /// Replicates single-channel data into three identical channels.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }
}

/// Scene-linear intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRaster(pub Raster);

/// Display-encoded intensities together with the exponent used to encode them.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRaster {
    raster: Raster,
    gamma: f64,
}

impl LinearRaster {
    pub fn raster(&self) -> &Raster {
        &self.0
    }
}

impl EncodedRaster {
    pub fn new(raster: Raster, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Invalid(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { raster, gamma })
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

fn map_power(r: &Raster, exponent: f64) -> Raster {
    Raster {
        width: r.width,
        height: r.height,
        channels: r.channels,
        data: r
            .data
            .iter()
            .map(|&v| ((v as f64).powf(exponent) as f32).clamp(0.0, 1.0))
            .collect(),
    }
}

/// `out = r^(1/gamma)` per element.
pub fn gamma_encode(r: &LinearRaster, gamma: f64) -> Result<EncodedRaster> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Invalid(format!("gamma must be positive, got {gamma}")));
    }
    EncodedRaster::new(map_power(&r.0, 1.0 / gamma), gamma)
}

pub fn gamma_decode(r: &EncodedRaster) -> LinearRaster {
    LinearRaster(map_power(&r.raster, r.gamma))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn check_png(path: &Path) -> Result<()> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        Ok(())
    } else {
        Err(Error::format(path, "only PNG images are supported"))
    }
}

/// Reads an 8- or 16-bit PNG as a display-encoded raster (gamma [`DEFAULT_GAMMA`]).
pub fn load_image(path: impl AsRef<Path>) -> Result<EncodedRaster> {
    let path = path.as_ref();
    check_png(path)?;
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported pixel layout {:?}", other.color()),
            ))
        }
    };
    EncodedRaster::new(Raster::clamped(w, h, channels, data)?, DEFAULT_GAMMA)
}

/// Writes a raster as PNG, quantizing to the requested bit depth.
pub fn save_image(r: &Raster, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    check_png(path)?;
    let (w, h) = (r.width as u32, r.height as u32);
    let q8 = |v: &f32| (v * 255.0).round() as u8;
    let q16 = |v: &f32| (v * 65535.0).round() as u16;
    let img = match (r.channels, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, r.data.iter().map(q8).collect()).unwrap(),
        ),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, r.data.iter().map(q8).collect()).unwrap(),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, r.data.iter().map(q16).collect()).unwrap(),
        ),
        (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, r.data.iter().map(q16).collect()).unwrap(),
        ),
        _ => unreachable!("raster channels are 1 or 3"),
    };
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

/// Rounds every value to the nearest 8-bit level, as a save/load round trip would.
pub fn quantize8(r: &Raster) -> Raster {
    Raster {
        width: r.width,
        height: r.height,
        channels: r.channels,
        data: r.data.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
    }
}
