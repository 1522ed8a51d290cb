//! Full-reference quality metrics on display-encoded images.
use crate::raster::Raster;
use crate::{Error, Result};

/// PSNR of an exact match.
pub const PSNR_CAP: f64 = 100.0;

fn check_same(a: &Raster, b: &Raster) -> Result<()> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{}×{}×{} vs {}×{}×{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

/// `10·log10(peak² / MSE)` over all channels, capped at [`PSNR_CAP`]. No mean adjustment.
pub fn psnr(a: &Raster, b: &Raster, peak: f64) -> Result<f64> {
    check_same(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn luma(r: &Raster) -> Vec<f64> {
    if r.channels() == 1 {
        r.data().iter().map(|&v| v as f64).collect()
    } else {
        r.luminance().data().iter().map(|&v| v as f64).collect()
    }
}

/// Single-scale SSIM on luminance with an 11×11 Gaussian window (σ = 1.5), averaged over all
/// fully-contained window positions.
pub fn ssim(a: &Raster, b: &Raster, peak: f64) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {w}×{h}"
        )));
    }
    let (x, y) = (luma(a), luma(b));
    let r = SSIM_WINDOW / 2;
    let g1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let norm: f64 = g1.iter().sum();
    let g1: Vec<f64> = g1.iter().map(|v| v / norm).collect();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, gy) in g1.iter().enumerate() {
                for (dx, gx) in g1.iter().enumerate() {
                    let wgt = gy * gx;
                    let i = (oy + dy) * w + ox + dx;
                    let (p, q) = (x[i], y[i]);
                    mx += wgt * p;
                    my += wgt * q;
                    sxx += wgt * p * p;
                    syy += wgt * q * q;
                    sxy += wgt * p * q;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (ow * oh) as f64)
}
