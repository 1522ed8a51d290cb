use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use serde::Serialize;

use retinev::bench::measure_throughput;
use retinev::eval::{evaluate as score, evaluate_inputs, list_images, load_paired_dataset, Layout, Split};
use retinev::event_io::{read_events_csv, read_evtm, read_fpe, write_fpe};
use retinev::events::{extract_fpe, FpeMap, SensorConstants};
use retinev::lldm::{synthesize_training_sample, DegradationConfig};
use retinev::model::{Model, ModelConfig};
use retinev::raster::{load_image, save_image, BitDepth, EncodedRaster};
use retinev::t2i::beta_normalize;
use retinev::train::{
    pretrain_denoiser, train_main, Checkpoint, Observer, RunConfig, Stage, StepLog, TrainingSet, SEED_ENV,
};

use crate::{BenchArgs, BenchmarkArgs, EnhanceArgs, EvaluateArgs, SynthArgs, TrainArgs};

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

/// Precedence: command-line flag, config file, `RETINEV_SEED`, default.
fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let mut cfg = RunConfig::load(p)?;
            // Relative paths inside the file are relative to the file.
            let base = p.parent().unwrap_or(Path::new("."));
            if let Some(d) = &cfg.data.train_dir {
                if d.is_relative() {
                    cfg.data.train_dir = Some(base.join(d));
                }
            }
            if cfg.train.out_dir.is_relative() {
                cfg.train.out_dir = base.join(&cfg.train.out_dir);
            }
            cfg
        }
        None => RunConfig::default(),
    };
    cfg.apply_env_seed(env_seed().as_deref())?;
    if seed.is_some() {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn partial_dir(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    dir.with_file_name(name)
}

/// Runs `f` inside a scratch directory that is renamed to `dir` only on success.
fn atomically(dir: &Path, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    ensure!(!dir.exists(), "{} already exists", dir.display());
    let tmp = partial_dir(dir);
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).with_context(|| format!("removing stale {}", tmp.display()))?;
    }
    std::fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    match f(&tmp) {
        Ok(()) => std::fs::rename(&tmp, dir).with_context(|| format!("renaming into {}", dir.display())),
        Err(e) => {
            let _ = std::fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

#[derive(Serialize)]
struct SynthEntry {
    image: String,
    fpe: String,
    index: u64,
}

#[derive(Serialize)]
struct SynthManifest {
    seed: u64,
    degradation: DegradationConfig,
    sensor: SensorConstants,
    files: Vec<SynthEntry>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    ensure!(a.gt.is_dir(), "ground-truth directory {} does not exist", a.gt.display());
    let names = list_images(&a.gt)?;
    ensure!(!names.is_empty(), "no PNG images in {}", a.gt.display());
    let lldm = cfg.degradation();
    let sensor = cfg.model.sensor;
    atomically(&a.out, |dir| {
        std::fs::create_dir_all(dir.join("fpe"))?;
        std::fs::create_dir_all(dir.join("preview"))?;
        let mut files = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let img = load_image(a.gt.join(name))?;
            let gt = EncodedRaster::new(img.raster().to_rgb(), img.gamma())?;
            let (fpe, _) = synthesize_training_sample(&gt, &sensor, &lldm, i as u64)?;
            let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
            let fpe_name = format!("{stem}.fpe");
            write_fpe(&fpe, dir.join("fpe").join(&fpe_name))?;
            let preview = beta_normalize(&fpe, 0.0)?.illuminance_input(&sensor);
            save_image(&preview, dir.join("preview").join(format!("{stem}.png")), BitDepth::Eight)?;
            files.push(SynthEntry {
                image: name.clone(),
                fpe: format!("fpe/{fpe_name}"),
                index: i as u64,
            });
        }
        let manifest = SynthManifest {
            seed: lldm.seed,
            degradation: lldm.clone(),
            sensor,
            files,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    })?;
    info!("wrote {} timestamp maps to {}", names.len(), a.out.display());
    Ok(())
}

pub fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => match env_seed() {
            Some(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer"))?,
            None => 0,
        },
    };
    ensure!(a.train >= 1 && a.test >= 1, "both splits need at least one scene");
    ensure!(!a.out.join("train").exists(), "{} already exists", a.out.join("train").display());
    retinev::eval::build_benchmark_splits(&a.out, a.train, a.test, a.size, seed)?;
    info!(
        "benchmark with {} train and {} test scenes of {}px written to {}",
        a.train,
        a.test,
        a.size,
        a.out.display()
    );
    Ok(())
}

struct FileObserver {
    dir: PathBuf,
    prefix: &'static str,
    total: u64,
    log: BufWriter<File>,
}

impl Observer for FileObserver {
    fn step(&mut self, s: &StepLog) -> retinev::Result<()> {
        let r = &s.report;
        writeln!(
            self.log,
            "{},{:e},{},{},{},{},{}",
            s.iteration, s.lr, r.recon, r.reflectance, r.perceptual, r.total, s.grad_norm
        )
        .and_then(|_| self.log.flush())
        .map_err(|e| retinev::Error::Io {
            path: self.dir.clone(),
            source: e,
        })?;
        if s.iteration.is_multiple_of(50) || s.iteration == self.total {
            info!("{} {}/{} loss {:.5}", self.prefix, s.iteration, self.total, r.total);
        }
        Ok(())
    }

    fn checkpoint(&mut self, c: &Checkpoint) -> retinev::Result<()> {
        let name = if c.iteration >= self.total {
            format!("{}_final.ckpt", self.prefix)
        } else {
            format!("{}_{:06}.ckpt", self.prefix, c.iteration)
        };
        let path = self.dir.join(name);
        c.save(&path)?;
        info!("saved {}", path.display());
        Ok(())
    }
}

pub const LOG_HEADER: &str = "iteration,lr,recon,reflectance,perceptual,total,grad_norm";

pub fn train(a: TrainArgs, pretrain: bool) -> Result<()> {
    let cfg = load_config(Some(&a.config), a.seed)?;
    let stage = if pretrain { Stage::Pretrain } else { Stage::Main };
    let set = TrainingSet::load(&cfg)?;
    set.check(cfg.train.patch_size)?;
    let init = match (&a.resume, &a.init) {
        (Some(p), _) => {
            let c = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            ensure!(c.stage == stage, "{} is a {:?} checkpoint, not {:?}", p.display(), c.stage, stage);
            c.ensure_config(&cfg.hash())?;
            Some(c)
        }
        (None, Some(p)) => {
            let mut c = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            ensure!(
                c.model.config() == &cfg.model,
                "{} was trained with a different [model] section",
                p.display()
            );
            c.stage = Stage::Init;
            c.iteration = 0;
            c.optimizer = None;
            Some(c)
        }
        (None, None) => None,
    };
    let dir = cfg.train.out_dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let prefix = if pretrain { "pretrain" } else { "main" };
    let log_path = dir.join(format!("{prefix}_log.csv"));
    let resuming = a.resume.is_some() && log_path.exists();
    let file = if resuming {
        OpenOptions::new().append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    if !resuming {
        writeln!(log, "{LOG_HEADER}")?;
    }
    let total = if pretrain { cfg.train.iters_pretrain } else { cfg.train.iters_main };
    let mut obs = FileObserver {
        dir,
        prefix,
        total,
        log,
    };
    info!(
        "{prefix}: {} scenes, seed {}, {} iterations",
        set.len(),
        cfg.train.seed(),
        total
    );
    if pretrain {
        pretrain_denoiser(&cfg, &set, init, &mut obs)?;
    } else {
        train_main(&cfg, &set, init, &mut obs)?;
    }
    Ok(())
}

fn check_png(path: &Path) -> Result<()> {
    let ok = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    ensure!(ok, "{} must be a .png path", path.display());
    Ok(())
}

fn load_events(path: &Path, width: usize, height: usize) -> Result<FpeMap> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let stream = if is_csv {
        read_events_csv(path, width, height)?
    } else {
        read_evtm(path)?
    };
    Ok(extract_fpe(&stream))
}

pub fn enhance(a: EnhanceArgs) -> Result<()> {
    check_png(&a.out)?;
    ensure!(a.beta.is_finite() && a.beta >= 0.0, "--beta must be finite and non-negative");
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let img = load_image(&a.low)?;
    let low = EncodedRaster::new(img.raster().to_rgb(), img.gamma())?;
    let (w, h) = (low.raster().width(), low.raster().height());
    let fpe = match (&a.events, &a.fpe) {
        (Some(p), _) => load_events(p, w, h)?,
        (None, Some(p)) => read_fpe(p)?,
        (None, None) => bail!("one of --events or --fpe is required"),
    };
    ensure!(
        fpe.width() == w && fpe.height() == h,
        "image is {w}x{h} but the events cover {}x{}",
        fpe.width(),
        fpe.height()
    );
    let out = ckpt.model.enhance(&low, &fpe, a.beta)?;
    if let Some(dir) = &a.dump_intermediates {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        save_image(out.illumination.raster(), dir.join("illumination.png"), BitDepth::Sixteen)?;
        save_image(out.reflectance.raster(), dir.join("reflectance.png"), BitDepth::Sixteen)?;
    }
    save_image(out.image.raster(), &a.out, BitDepth::Eight)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let data = load_paired_dataset(&a.data, &Layout::default(), Split::Test)?;
    ensure!(!data.is_empty(), "no image pairs in {}", a.data.display());
    let report = score(&ckpt.model, &data, a.beta)?;
    let inputs = evaluate_inputs(&data)?;
    report.write(&a.report)?;
    println!(
        "enhanced: psnr {:.3} dB, ssim {:.4} | input: psnr {:.3} dB, ssim {:.4} | {} images",
        report.mean_psnr(),
        report.mean_ssim(),
        inputs.mean_psnr(),
        inputs.mean_ssim(),
        report.rows.len()
    );
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("size `{s}` is not WIDTHxHEIGHT"))?;
    let w: usize = w.trim().parse().with_context(|| format!("bad width in `{s}`"))?;
    let h: usize = h.trim().parse().with_context(|| format!("bad height in `{s}`"))?;
    ensure!(w > 0 && h > 0, "size must be positive");
    Ok((w, h))
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let (w, h) = parse_size(&a.size)?;
    ensure!(a.iters > 0, "--iters must be positive");
    let model = match &a.ckpt {
        Some(p) => Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?.model,
        None => Model::init(ModelConfig::default(), 0)?,
    };
    let report = measure_throughput(&model, w, h, a.iters)?;
    print!("{}", report.to_text());
    Ok(())
}
