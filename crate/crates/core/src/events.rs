//! Temporal-mapping events and the timestamp ↔ illuminance relation.
//!
//! After a step increase in transmittance, a pixel fires its first positive event once the charge
//! collected from illuminance `E` reaches the threshold energy: `η·E·A·t = C·U²/2`. Hence
//! `E = k / t` with `k = C·U² / (2·η·A)`.
use crate::raster::{LinearRaster, Raster};
use crate::{Error, Result};

/// Marker for pixels without a usable timestamp.
pub const MISSING: f64 = f64::NAN;

/// Illuminance floor used when inverting `E = k / t`.
pub const DEFAULT_EPS_E: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds since the transmittance step.
    pub t: f64,
    pub p: Polarity,
}

/// Events of one sensor, in no particular order.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Result<Self> {
        if width > u16::MAX as usize + 1 || height > u16::MAX as usize + 1 {
            return Err(Error::Invalid(format!("sensor {width}×{height} too large")));
        }
        for e in &events {
            if e.x as usize >= width || e.y as usize >= height {
                return Err(Error::Invalid(format!(
                    "event at ({}, {}) outside {width}×{height} sensor",
                    e.x, e.y
                )));
            }
            if !(e.t.is_finite() && e.t >= 0.0) {
                return Err(Error::Invalid(format!("event timestamp {} is not a finite non-negative value", e.t)));
            }
        }
        Ok(Self { width, height, events })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One positive event per pixel at its first-positive-event time, `time_scale` µs per map unit.
    /// Missing pixels emit nothing.
    pub fn from_fpe_map(map: &FpeMap, time_scale: f64) -> Result<Self> {
        let events = map
            .values()
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_nan())
            .map(|(i, &t)| Event {
                x: (i % map.width()) as u16,
                y: (i / map.width()) as u16,
                t: t * time_scale,
                p: Polarity::Positive,
            })
            .collect();
        Self::new(map.width(), map.height(), events)
    }
}

/// Per-pixel first-positive-event timestamps; [`MISSING`] (NaN) where no event fired.
#[derive(Clone, Debug)]
pub struct FpeMap {
    width: usize,
    height: usize,
    t: Vec<f64>,
}

impl PartialEq for FpeMap {
    /// Bitwise equality, so two MISSING entries compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.t.iter().zip(&other.t).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FpeMap {
    pub fn new(width: usize, height: usize, t: Vec<f64>) -> Result<Self> {
        if t.len() != width * height {
            return Err(Error::Shape(format!("{} timestamps for a {width}×{height} map", t.len())));
        }
        if let Some(bad) = t.iter().find(|v| !v.is_nan() && !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Invalid(format!("timestamp {bad} is not finite and positive")));
        }
        let t = t.into_iter().map(|v| if v.is_nan() { MISSING } else { v }).collect();
        Ok(Self { width, height, t })
    }

    pub fn all_missing(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            t: vec![MISSING; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.t[y * self.width + x];
        (!v.is_nan()).then_some(v)
    }

    pub fn missing_count(&self) -> usize {
        self.t.iter().filter(|v| v.is_nan()).count()
    }

    /// Largest present timestamp.
    pub fn max(&self) -> Option<f64> {
        self.t.iter().copied().filter(|v| !v.is_nan()).reduce(f64::max)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape("crop exceeds map".into()));
        }
        let mut t = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            t.extend_from_slice(&self.t[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(Self { width, height, t })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SensorConstants {
    /// Photoelectric conversion efficiency.
    pub eta: f64,
    /// Photosensitive area, m².
    pub area: f64,
    /// Pixel capacitance, F.
    pub capacitance: f64,
    /// Threshold voltage, V.
    pub threshold_voltage: f64,
}

impl Default for SensorConstants {
    /// Constants giving `k = 1`.
    fn default() -> Self {
        Self {
            eta: 0.5,
            area: 1.0,
            capacitance: 1.0,
            threshold_voltage: 1.0,
        }
    }
}

impl SensorConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("area", self.area),
            ("capacitance", self.capacitance),
            ("threshold_voltage", self.threshold_voltage),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("sensor.{name}"), "must be finite and positive"));
            }
        }
        Ok(())
    }

    /// `k = C·U² / (2·η·A)`.
    pub fn k(&self) -> f64 {
        self.capacitance * self.threshold_voltage * self.threshold_voltage / (2.0 * self.eta * self.area)
    }
}

/// Per-pixel illuminance (linear, arbitrary units); NaN where unknown.
#[derive(Clone, Debug)]
pub struct IlluminanceMap {
    width: usize,
    height: usize,
    e: Vec<f64>,
}

impl IlluminanceMap {
    pub fn new(width: usize, height: usize, e: Vec<f64>) -> Result<Self> {
        if e.len() != width * height {
            return Err(Error::Shape(format!("{} values for a {width}×{height} map", e.len())));
        }
        if let Some(bad) = e.iter().find(|v| !v.is_nan() && !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Invalid(format!("illuminance {bad} is not finite and non-negative")));
        }
        Ok(Self { width, height, e })
    }

    pub fn from_raster(r: &Raster) -> Self {
        let lum = r.luminance();
        Self {
            width: r.width(),
            height: r.height(),
            e: lum.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.e
    }
}

/// Per-pixel contrast thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdField {
    width: usize,
    height: usize,
    c: Vec<f64>,
}

impl ThresholdField {
    pub fn new(width: usize, height: usize, c: Vec<f64>) -> Result<Self> {
        if c.len() != width * height {
            return Err(Error::Shape(format!("{} thresholds for a {width}×{height} field", c.len())));
        }
        if c.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Invalid("contrast thresholds must be finite and positive".into()));
        }
        Ok(Self { width, height, c })
    }

    pub fn uniform(width: usize, height: usize, c: f64) -> Result<Self> {
        Self::new(width, height, vec![c; width * height])
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }
}

/// Earliest positive-polarity timestamp at each pixel.
pub fn extract_fpe(s: &EventStream) -> FpeMap {
    let mut t = vec![MISSING; s.width * s.height];
    for e in s.events.iter().filter(|e| e.p == Polarity::Positive) {
        let slot = &mut t[e.y as usize * s.width + e.x as usize];
        if slot.is_nan() || e.t < *slot {
            *slot = e.t;
        }
    }
    // A zero timestamp cannot be inverted to an illuminance.
    for v in t.iter_mut() {
        if *v == 0.0 {
            *v = f64::MIN_POSITIVE;
        }
    }
    FpeMap {
        width: s.width,
        height: s.height,
        t,
    }
}

/// `E = k / t` at every present pixel.
pub fn illuminance_from_fpe(m: &FpeMap, k: f64) -> Result<IlluminanceMap> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Domain(format!("conversion constant k must be positive, got {k}")));
    }
    let e = m
        .t
        .iter()
        .map(|&t| {
            if t.is_nan() {
                Ok(MISSING)
            } else if t <= 0.0 {
                Err(Error::Domain("zero timestamp".into()))
            } else {
                Ok(k / t)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    IlluminanceMap::new(m.width, m.height, e)
}

/// `t = k / max(E, eps_e)`; unknown illuminance stays missing.
pub fn fpe_from_illuminance(e: &IlluminanceMap, k: f64, eps_e: f64) -> Result<FpeMap> {
    if !(k.is_finite() && k > 0.0) || !(eps_e.is_finite() && eps_e > 0.0) {
        return Err(Error::Domain(format!("need k > 0 and eps_E > 0, got {k}, {eps_e}")));
    }
    let t = e
        .e
        .iter()
        .map(|&v| if v.is_nan() { MISSING } else { k / v.max(eps_e) })
        .collect();
    FpeMap::new(e.width, e.height, t)
}

/// Step-transmittance simulation: `t = k · c / max(L, eps_e)` with `L` the luminance of `gt`.
pub fn simulate_fpe_map(
    gt: &LinearRaster,
    sensor: &SensorConstants,
    thresholds: &ThresholdField,
    eps_e: f64,
) -> Result<FpeMap> {
    let gt = gt.raster();
    if thresholds.width != gt.width() || thresholds.height != gt.height() {
        return Err(Error::Shape(format!(
            "threshold field {}×{} vs image {}×{}",
            thresholds.width,
            thresholds.height,
            gt.width(),
            gt.height()
        )));
    }
    sensor.validate()?;
    let k = sensor.k();
    let lum = gt.luminance();
    let t = lum
        .data()
        .iter()
        .zip(&thresholds.c)
        .map(|(&l, &c)| k * c / (l as f64).max(eps_e))
        .collect();
    FpeMap::new(gt.width(), gt.height(), t)
}
