//! On-disk event and timestamp-map formats.
//!
//! `EVTM` v1, little-endian:
//! ```text
//! "EVTM" | u16 width | u16 height | u64 count | count × { u16 x, u16 y, i8 p, u8 0, u32 t_us }
//! ```
//! `FPE1`, little-endian:
//! ```text
//! "FPE1" | u16 width | u16 height | width·height × f32 t (row-major, NaN = missing)
//! ```
//! Events may also be exchanged as CSV with the header `x,y,t,p`.
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::events::{Event, EventStream, FpeMap, Polarity, MISSING};
use crate::{Error, Result};

const EVTM_MAGIC: &[u8; 4] = b"EVTM";
const FPE_MAGIC: &[u8; 4] = b"FPE1";
const EVTM_HEADER: usize = 16;
const EVTM_RECORD: usize = 10;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn geometry(width: usize, height: usize) -> Result<(u16, u16)> {
    match (u16::try_from(width), u16::try_from(height)) {
        (Ok(w), Ok(h)) => Ok((w, h)),
        _ => Err(Error::Invalid(format!("{width}×{height} does not fit the 16-bit header"))),
    }
}

pub fn encode_evtm(s: &EventStream) -> Result<Vec<u8>> {
    let (w, h) = geometry(s.width(), s.height())?;
    let mut out = Vec::with_capacity(EVTM_HEADER + EVTM_RECORD * s.len());
    out.extend_from_slice(EVTM_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    for e in s.events() {
        let t = e.t.round();
        if t > u32::MAX as f64 {
            return Err(Error::Invalid(format!("timestamp {} µs exceeds the u32 range", e.t)));
        }
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.push(0);
        out.extend_from_slice(&(t as u32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_evtm(bytes: &[u8], path: &Path) -> Result<EventStream> {
    if bytes.len() < EVTM_HEADER || &bytes[..4] != EVTM_MAGIC {
        return Err(Error::format(path, "not an EVTM file"));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[EVTM_HEADER..];
    if count.checked_mul(EVTM_RECORD as u64) != Some(body.len() as u64) {
        return Err(Error::format(
            path,
            format!("header declares {count} events but body holds {} bytes", body.len()),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, r) in body.chunks_exact(EVTM_RECORD).enumerate() {
        let p = Polarity::from_sign(r[4] as i8 as i64)
            .ok_or_else(|| Error::format(path, format!("event {i}: polarity byte {}", r[4] as i8)))?;
        if r[5] != 0 {
            return Err(Error::format(path, format!("event {i}: non-zero padding")));
        }
        events.push(Event {
            x: u16::from_le_bytes([r[0], r[1]]),
            y: u16::from_le_bytes([r[2], r[3]]),
            p,
            t: u32::from_le_bytes(r[6..10].try_into().unwrap()) as f64,
        });
    }
    EventStream::new(w, h, events).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_evtm(s: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    write_all(path.as_ref(), &encode_evtm(s)?)
}

pub fn read_evtm(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    decode_evtm(&read_all(path)?, path)
}

/// Reads `x,y,t,p` rows. CSV carries no geometry, so the sensor size is supplied.
pub fn read_events_csv(path: impl AsRef<Path>, width: usize, height: usize) -> Result<EventStream> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            let header: Vec<_> = line.split(',').map(str::trim).collect();
            if header != ["x", "y", "t", "p"] {
                return Err(Error::format(path, "CSV header must be `x,y,t,p`"));
            }
            continue;
        }
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", lineno + 1));
        let fields: Vec<_> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let x: u16 = fields[0].parse().map_err(|_| bad("bad x"))?;
        let y: u16 = fields[1].parse().map_err(|_| bad("bad y"))?;
        let t: f64 = fields[2].parse().map_err(|_| bad("bad t"))?;
        let p = fields[3]
            .parse::<i64>()
            .ok()
            .and_then(Polarity::from_sign)
            .ok_or_else(|| bad("polarity must be 1 or -1"))?;
        events.push(Event { x, y, t, p });
    }
    EventStream::new(width, height, events).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_events_csv(s: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "x,y,t,p").map_err(io)?;
    for e in s.events() {
        writeln!(w, "{},{},{},{}", e.x, e.y, e.t, e.p.sign()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn encode_fpe(m: &FpeMap) -> Result<Vec<u8>> {
    let (w, h) = geometry(m.width(), m.height())?;
    let mut out = Vec::with_capacity(8 + 4 * m.values().len());
    out.extend_from_slice(FPE_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for &t in m.values() {
        let v = if t.is_nan() { f32::NAN } else { t as f32 };
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fpe(bytes: &[u8], path: &Path) -> Result<FpeMap> {
    if bytes.len() < 8 || &bytes[..4] != FPE_MAGIC {
        return Err(Error::format(path, "not an FPE1 file"));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * w * h {
        return Err(Error::format(path, format!("expected {} bytes of timestamps, found {}", 4 * w * h, body.len())));
    }
    let t = body
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if v.is_nan() {
                MISSING
            } else {
                v as f64
            }
        })
        .collect();
    FpeMap::new(w, h, t).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_fpe(m: &FpeMap, path: impl AsRef<Path>) -> Result<()> {
    write_all(path.as_ref(), &encode_fpe(m)?)
}

pub fn read_fpe(path: impl AsRef<Path>) -> Result<FpeMap> {
    let path = path.as_ref();
    decode_fpe(&read_all(path)?, path)
}
