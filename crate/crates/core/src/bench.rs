//! Forward-pass latency measurement.
use std::fmt::Write as _;
use std::time::Instant;

use crate::eval::procedural_scene;
use crate::events::{simulate_fpe_map, ThresholdField, DEFAULT_EPS_E};
use crate::model::Model;
use crate::raster::gamma_decode;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputReport {
    pub width: usize,
    pub height: usize,
    pub iterations: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub fps: f64,
}

impl ThroughputReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "resolution: {}x{}", self.width, self.height);
        let _ = writeln!(s, "iterations: {}", self.iterations);
        let _ = writeln!(s, "mean_latency_ms: {:.3}", self.mean_ms);
        let _ = writeln!(s, "median_latency_ms: {:.3}", self.median_ms);
        let _ = writeln!(s, "fps: {:.3}", self.fps);
        s
    }
}

/// Times `iterations` full enhancements of a synthetic `width × height` frame after one warm-up.
pub fn measure_throughput(model: &Model<f32>, width: usize, height: usize, iterations: usize) -> Result<ThroughputReport> {
    if iterations == 0 || width == 0 || height == 0 {
        return Err(Error::Invalid("bench needs a positive size and iteration count".into()));
    }
    let scene = procedural_scene(width, height, 0, 0)?;
    let lin = gamma_decode(&scene);
    let c = ThresholdField::uniform(width, height, 0.2)?;
    let fpe = simulate_fpe_map(&lin, &model.config().sensor, &c, DEFAULT_EPS_E)?;
    model.enhance(&scene, &fpe, 0.0)?;
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = Instant::now();
        model.enhance(&scene, &fpe, 0.0)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / iterations as f64;
    times.sort_by(f64::total_cmp);
    let median_ms = if iterations % 2 == 1 {
        times[iterations / 2]
    } else {
        0.5 * (times[iterations / 2 - 1] + times[iterations / 2])
    };
    Ok(ThroughputReport {
        width,
        height,
        iterations,
        mean_ms,
        median_ms,
        fps: 1e3 / mean_ms,
    })
}
