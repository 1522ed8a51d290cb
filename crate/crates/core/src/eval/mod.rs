//! Metrics, paired datasets, the synthetic benchmark and evaluation reports.
mod dataset;
mod metrics;
mod synthetic;

use std::fmt::Write as _;
use std::path::Path;

pub use dataset::{fpe_path, list_images, load_lol_v1, load_paired_dataset, ImagePair, Layout, PairedDataset, Split};
pub use metrics::{psnr, ssim, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
pub use synthetic::{
    benchmark_fpe, build_benchmark_splits, build_synthetic_benchmark, procedural_scene, read_manifest,
    BenchmarkManifest, SceneEntry, MANIFEST_NAME,
};

use crate::event_io::read_fpe;
use crate::model::Model;
use crate::raster::{load_image, Raster};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetric {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image metrics and their means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ImageMetric>,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// Tab-separated `name psnr ssim` rows followed by a `mean` row.
    pub fn to_text(&self) -> String {
        let mut s = String::from("name\tpsnr_db\tssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.4}\t{:.6}", r.name, r.psnr, r.ssim);
        }
        let _ = writeln!(s, "mean\t{:.4}\t{:.6}", self.mean_psnr(), self.mean_ssim());
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn metric(name: &str, out: &Raster, gt: &Raster) -> Result<ImageMetric> {
    Ok(ImageMetric {
        name: name.to_string(),
        psnr: psnr(out, gt, 1.0)?,
        ssim: ssim(out, gt, 1.0)?,
    })
}

/// Metrics of the unprocessed low-light inputs against the ground truth.
pub fn evaluate_inputs(data: &PairedDataset) -> Result<MetricReport> {
    let rows = data
        .pairs
        .iter()
        .map(|p| {
            let low = load_image(&p.low)?;
            let high = load_image(&p.high)?;
            metric(&p.name, &low.raster().to_rgb(), &high.raster().to_rgb())
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport { rows })
}

/// Enhances every pair using its stored timestamp map and scores it against the ground truth.
pub fn evaluate(model: &Model<f32>, data: &PairedDataset, beta: f64) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(data.len());
    for p in &data.pairs {
        let fpe_file = fpe_path(&data.root, p);
        if !fpe_file.is_file() {
            return Err(Error::Dataset(format!(
                "{}: missing timestamp map {}",
                p.name,
                fpe_file.display()
            )));
        }
        let fpe = read_fpe(&fpe_file)?;
        let low = load_image(&p.low)?;
        let low = crate::raster::EncodedRaster::new(low.raster().to_rgb(), low.gamma())?;
        let high = load_image(&p.high)?;
        let out = model.enhance(&low, &fpe, beta)?;
        rows.push(metric(&p.name, out.image.raster(), &high.raster().to_rgb())?);
    }
    Ok(MetricReport { rows })
}
