//! Procedural scenes and the self-contained benchmark built from them.
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::event_io::write_fpe;
use crate::events::{FpeMap, SensorConstants};
use crate::lldm::{synthesize_low_light, synthesize_training_sample, DegradationConfig, LowLightConfig};
use crate::raster::{quantize8, save_image, BitDepth, EncodedRaster, Raster, DEFAULT_GAMMA, LUMA_WEIGHTS};

/// Display-encoded luminance of the brightest point of a procedural scene.
pub const WHITE_LEVEL: f32 = 0.9;
use crate::rng::{self, Domain};
use crate::{Error, Result};

fn color(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    let g: f32 = rng.random_range(lo..hi);
    // Small chroma offsets: the illumination branch is monochrome.
    std::array::from_fn(|_| g + rng.random_range(-0.12f32..0.12))
}

enum Shape {
    Disc { cx: f32, cy: f32, r: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
}

/// A shape, its color and optional stripes (frequency, orientation, amplitude).
type Layer = (Shape, [f32; 3], Option<(f32, f32, f32)>);

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

/// A display-encoded RGB scene: gradient background, flat and textured shapes.
pub fn procedural_scene(width: usize, height: usize, seed: u64, index: u64) -> Result<EncodedRaster> {
    let mut rng = rng::stream(seed, Domain::Scene, index);
    let c0 = color(&mut rng, 0.1, 0.6);
    let c1 = color(&mut rng, 0.3, 0.9);
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let n_shapes = rng.random_range(3..=6);
    let shapes: Vec<Layer> = (0..n_shapes)
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                Shape::Disc {
                    cx: rng.random_range(0.0..1.0),
                    cy: rng.random_range(0.0..1.0),
                    r: rng.random_range(0.08..0.3),
                }
            } else {
                let (x0, y0): (f32, f32) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(0.1..0.4),
                    y1: y0 + rng.random_range(0.1..0.4),
                }
            };
            let c = color(&mut rng, 0.05, 0.95);
            // Stripes: frequency, orientation, amplitude.
            let texture = rng.random_bool(0.4).then(|| {
                (
                    rng.random_range(8.0..30.0),
                    rng.random_range(0.0..std::f32::consts::PI),
                    rng.random_range(0.1..0.3),
                )
            });
            (shape, c, texture)
        })
        .collect();
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32;
            let v = (y as f32 + 0.5) / height as f32;
            let s = ((u - 0.5) * dx + (v - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            let mut px: [f32; 3] = std::array::from_fn(|c| c0[c] * (1.0 - s) + c1[c] * s);
            for (shape, c, tex) in &shapes {
                if shape.contains(u, v) {
                    let m = tex.map_or(1.0, |(f, th, a)| 1.0 + a * (f * (u * th.cos() + v * th.sin())).sin());
                    px = std::array::from_fn(|i| c[i] * m);
                }
            }
            data.extend(px.iter().map(|p| p.clamp(0.02, 0.98)));
        }
    }
    // Normal exposure: the brightest luminance lands at WHITE_LEVEL, as auto-exposure would place it.
    let lum_max = data
        .chunks(3)
        .map(|p| {
            p.iter()
                .zip(LUMA_WEIGHTS)
                .map(|(&v, w)| w as f64 * (v as f64).powf(DEFAULT_GAMMA))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let gain = ((WHITE_LEVEL as f64).powf(DEFAULT_GAMMA) / lum_max).powf(1.0 / DEFAULT_GAMMA) as f32;
    data.iter_mut().for_each(|v| *v = (*v * gain).clamp(0.02, 0.98));
    EncodedRaster::new(Raster::new(width, height, 3, data)?, DEFAULT_GAMMA)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub name: String,
    pub index: u64,
    pub exposure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub seed: u64,
    pub size: usize,
    pub gamma: f64,
    pub degradation: DegradationConfig,
    pub low_light: LowLightConfig,
    pub sensor: SensorConstants,
    pub scenes: Vec<SceneEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Timestamp map of a benchmark scene, from its stored 8-bit ground truth.
pub fn benchmark_fpe(gt: &EncodedRaster, manifest_seed: u64, index: u64, sensor: &SensorConstants) -> Result<FpeMap> {
    let cfg = DegradationConfig {
        seed: manifest_seed,
        ..DegradationConfig::testing()
    };
    Ok(synthesize_training_sample(gt, sensor, &cfg, index)?.0)
}

fn partial_dir(root: &Path) -> PathBuf {
    let mut name = root.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    root.with_file_name(name)
}

/// Writes `n` scenes of `size × size` into `root/{high,low,fpe}` plus a manifest.
/// The directory appears only once complete.
pub fn build_synthetic_benchmark(root: impl AsRef<Path>, n: usize, size: usize, seed: u64) -> Result<BenchmarkManifest> {
    let root = root.as_ref();
    if n == 0 {
        return Err(Error::Invalid("benchmark needs at least one scene".into()));
    }
    if size < 16 {
        return Err(Error::Invalid(format!("scene size {size} is below the minimum of 16")));
    }
    if root.exists() {
        return Err(Error::Invalid(format!("{} already exists", root.display())));
    }
    let tmp = partial_dir(root);
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    let result = write_benchmark(&tmp, n, size, seed);
    match result {
        Ok(m) => {
            std::fs::rename(&tmp, root).map_err(|e| Error::io(root, e))?;
            Ok(m)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn write_benchmark(dir: &Path, n: usize, size: usize, seed: u64) -> Result<BenchmarkManifest> {
    for sub in ["high", "low", "fpe"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let sensor = SensorConstants::default();
    let low_light = LowLightConfig::default();
    let mut scenes = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let name = format!("{i:04}");
        let gt = procedural_scene(size, size, seed, i)?;
        let gt = EncodedRaster::new(quantize8(gt.raster()), gt.gamma())?;
        let (low, exposure) = synthesize_low_light(&gt, &low_light, &mut rng::stream(seed, Domain::Bench, i))?;
        let fpe = benchmark_fpe(&gt, seed, i, &sensor)?;
        save_image(gt.raster(), dir.join("high").join(format!("{name}.png")), BitDepth::Eight)?;
        save_image(low.raster(), dir.join("low").join(format!("{name}.png")), BitDepth::Eight)?;
        write_fpe(&fpe, dir.join("fpe").join(format!("{name}.fpe")))?;
        scenes.push(SceneEntry {
            name: format!("{name}.png"),
            index: i,
            exposure,
        });
    }
    let manifest = BenchmarkManifest {
        seed,
        size,
        gamma: DEFAULT_GAMMA,
        degradation: DegradationConfig {
            seed,
            ..DegradationConfig::testing()
        },
        low_light,
        sensor,
        scenes,
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Seed offset separating test scenes from training scenes.
const TEST_SEED_SALT: u64 = 0x7e57_5eed;

/// `root/train` and `root/test` benchmarks with disjoint scenes.
pub fn build_benchmark_splits(
    root: impl AsRef<Path>,
    n_train: usize,
    n_test: usize,
    size: usize,
    seed: u64,
) -> Result<(BenchmarkManifest, BenchmarkManifest)> {
    let root = root.as_ref();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    Ok((
        build_synthetic_benchmark(root.join("train"), n_train, size, seed)?,
        build_synthetic_benchmark(root.join("test"), n_test, size, seed ^ TEST_SEED_SALT)?,
    ))
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<BenchmarkManifest> {
    let path = root.as_ref().join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}
