use std::path::Path;

use retinev::eval::{build_benchmark_splits, evaluate, load_paired_dataset, read_manifest, Layout, Split};
use retinev::event_io::read_fpe;
use retinev::losses::Extractor;
use retinev::model::{Model, ModelConfig};
use retinev::raster::{load_image, save_image, BitDepth, Raster};
use retinev::train::{
    pretrain_denoiser, train_main, Checkpoint, DataMode, Observer, Recorder, RunConfig, Stage, TrainingSet,
};

fn tiny(dir: &Path, mode: DataMode) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.model = ModelConfig {
        decom_width: 6,
        decom_layers: 3,
        denoiser_base: 4,
        mlp_hidden: 4,
        ire_width: 8,
        ire_blocks: 1,
        ire_heads: 2,
        ..ModelConfig::default()
    };
    cfg.data.train_dir = Some(dir.to_path_buf());
    cfg.data.mode = mode;
    cfg.train.patch_size = 16;
    cfg.train.batch_size = 2;
    cfg.train.iters_pretrain = 6;
    cfg.train.iters_main = 6;
    cfg.train.checkpoint_every = 3;
    cfg.train.seed = Some(9);
    cfg
}

fn scene_dir(dir: &Path, n: usize) {
    let high = dir.join("high");
    std::fs::create_dir_all(&high).unwrap();
    for i in 0..n {
        let r = retinev::eval::procedural_scene(24, 24, 5, i as u64).unwrap();
        save_image(r.raster(), high.join(format!("s{i}.png")), BitDepth::Eight).unwrap();
    }
}

#[derive(Default)]
struct Keep(Vec<Checkpoint>);

impl Observer for Keep {
    fn checkpoint(&mut self, c: &Checkpoint) -> retinev::Result<()> {
        self.0.push(c.clone());
        Ok(())
    }
}

#[test]
fn zero_iterations_return_the_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    scene_dir(tmp.path(), 2);
    let mut cfg = tiny(tmp.path(), DataMode::Synthetic);
    cfg.train.iters_main = 0;
    let set = TrainingSet::load(&cfg).unwrap();
    let ck = train_main(&cfg, &set, None, &mut ()).unwrap();
    let init = Model::<f32>::init(cfg.model.clone(), 9).unwrap();
    assert_eq!(ck.iteration, 0);
    for ((_, a, ta), (_, b, tb)) in ck.model.params.iter().zip(init.params.iter()) {
        assert_eq!(a, b);
        assert_eq!(ta.data(), tb.data());
    }
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    scene_dir(tmp.path(), 3);
    let cfg = tiny(tmp.path(), DataMode::Synthetic);
    let set = TrainingSet::load(&cfg).unwrap();

    let mut keep = Keep::default();
    let full = train_main(&cfg, &set, None, &mut keep).unwrap();
    let mid = keep.0.iter().find(|c| c.iteration == 3).expect("periodic checkpoint").clone();
    assert_eq!(mid.stage, Stage::Main);

    let reloaded = Checkpoint::from_bytes(&mid.to_bytes()).unwrap();
    let mut rec = Recorder::default();
    let resumed = train_main(&cfg, &set, Some(reloaded), &mut rec).unwrap();
    assert_eq!(rec.steps.first().unwrap().iteration, 4);
    assert_eq!(resumed.to_bytes(), full.to_bytes());

    // A changed setting refuses the checkpoint.
    let mut other = cfg.clone();
    other.train.batch_size = 1;
    let err = train_main(&other, &set, Some(mid), &mut ()).unwrap_err();
    assert!(err.to_string().contains("config"), "{err}");
}

#[test]
fn paired_mode_reads_low_images() {
    let tmp = tempfile::tempdir().unwrap();
    build_benchmark_splits(tmp.path().join("b"), 2, 1, 24, 3).unwrap();
    let cfg = tiny(&tmp.path().join("b").join("train"), DataMode::Paired);
    let set = TrainingSet::load(&cfg).unwrap();
    assert_eq!(set.len(), 2);
    assert!(set.scenes.iter().all(|s| s.low.is_some()));
    let ck = train_main(&cfg, &set, None, &mut ()).unwrap();
    assert!(ck.model.params.all_finite());
}

#[test]
fn pretraining_reduces_the_denoising_loss() {
    let tmp = tempfile::tempdir().unwrap();
    scene_dir(tmp.path(), 1);
    let mut cfg = tiny(tmp.path(), DataMode::Synthetic);
    cfg.train.iters_pretrain = 50;
    let set = TrainingSet::load(&cfg).unwrap();
    let mut rec = Recorder::default();
    let ck = pretrain_denoiser(&cfg, &set, None, &mut rec).unwrap();
    assert_eq!(ck.stage, Stage::Pretrain);
    let mean = |s: &[retinev::train::StepLog]| s.iter().map(|l| l.report.total).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&rec.steps[..10]), mean(&rec.steps[40..]));
    assert!(last < first, "pretraining loss {first} -> {last}");

    // Only denoiser weights move during pretraining.
    let init = Model::<f32>::init(cfg.model.clone(), 9).unwrap();
    for ((_, name, a), (_, _, b)) in ck.model.params.iter().zip(init.params.iter()) {
        if !name.starts_with("t2i.denoiser.") {
            assert_eq!(a.data(), b.data(), "{name} changed");
        }
    }

    // Main training starts from the pretrained weights with a fresh optimizer.
    let mut rec = Recorder::default();
    let main = train_main(&cfg, &set, Some(ck), &mut rec).unwrap();
    assert_eq!(rec.steps.first().unwrap().iteration, 1);
    assert_eq!(main.stage, Stage::Main);
}

#[test]
fn extractor_is_not_part_of_the_model() {
    let tmp = tempfile::tempdir().unwrap();
    scene_dir(tmp.path(), 2);
    let cfg = tiny(tmp.path(), DataMode::Synthetic);
    let before = Extractor::<f32>::new(cfg.loss.extractor_seed);
    let set = TrainingSet::load(&cfg).unwrap();
    let ck = train_main(&cfg, &set, None, &mut ()).unwrap();
    assert!(ck.model.params.iter().all(|(_, name, _)| !name.contains("stage")));
    let after = Extractor::<f32>::new(cfg.loss.extractor_seed);
    for ((_, _, a), (_, _, b)) in before.params().iter().zip(after.params().iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn benchmark_is_reproducible_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    build_benchmark_splits(&a, 3, 2, 32, 77).unwrap();
    build_benchmark_splits(&b, 3, 2, 32, 77).unwrap();
    for split in ["train", "test"] {
        for sub in ["high", "low", "fpe"] {
            let da = a.join(split).join(sub);
            let mut names: Vec<_> = std::fs::read_dir(&da).unwrap().map(|e| e.unwrap().file_name()).collect();
            names.sort();
            for n in names {
                assert_eq!(
                    std::fs::read(da.join(&n)).unwrap(),
                    std::fs::read(b.join(split).join(sub).join(&n)).unwrap(),
                    "{split}/{sub}/{n:?}"
                );
            }
        }
    }
    let m = read_manifest(a.join("test")).unwrap();
    assert_eq!(m.scenes.len(), 2);
    let train = read_manifest(a.join("train")).unwrap();
    assert_ne!(train.seed, m.seed);

    // Stored maps are the test-mode synthesis of the stored ground truth, at file precision.
    let data = load_paired_dataset(a.join("test"), &Layout::default(), Split::Test).unwrap();
    for (i, p) in data.pairs.iter().enumerate() {
        let gt = load_image(&p.high).unwrap();
        let stored = read_fpe(retinev::eval::fpe_path(&data.root, p)).unwrap();
        let fresh = retinev::eval::benchmark_fpe(&gt, m.seed, i as u64, &m.sensor).unwrap();
        let same = stored
            .values()
            .iter()
            .zip(fresh.values())
            .all(|(x, y)| (x.is_nan() && y.is_nan()) || *x == (*y as f32) as f64);
        assert!(same, "{}", p.name);
    }

    // Rebuilding into an existing directory is refused.
    assert!(build_benchmark_splits(&a, 3, 2, 32, 77).is_err());
}

#[test]
fn untrained_model_is_evaluated_on_every_image() {
    let tmp = tempfile::tempdir().unwrap();
    build_benchmark_splits(tmp.path(), 1, 3, 24, 5).unwrap();
    let data = load_paired_dataset(tmp.path().join("test"), &Layout::default(), Split::Test).unwrap();
    let model = Model::<f32>::init(ModelConfig::desk(), 0).unwrap();
    let r = evaluate(&model, &data, 0.0).unwrap();
    assert_eq!(r.rows.len(), 3);
    let text = r.to_text();
    assert_eq!(text.lines().count(), 5);
    assert_eq!(r, evaluate(&model, &data, 0.0).unwrap());

    std::fs::remove_file(tmp.path().join("test").join("fpe").join("0001.fpe")).unwrap();
    let err = evaluate(&model, &data, 0.0).unwrap_err().to_string();
    assert!(err.contains("0001"), "{err}");
}

#[test]
fn low_and_high_must_pair_up() {
    let tmp = tempfile::tempdir().unwrap();
    for (sub, names) in [("low", &["a.png", "b.png"][..]), ("high", &["a.png"][..])] {
        std::fs::create_dir_all(tmp.path().join(sub)).unwrap();
        for n in names {
            save_image(&Raster::filled(4, 4, 3, 0.5).unwrap(), tmp.path().join(sub).join(n), BitDepth::Eight).unwrap();
        }
    }
    let err = load_paired_dataset(tmp.path(), &Layout::default(), Split::Test).unwrap_err().to_string();
    assert!(err.contains("b.png"), "{err}");
}

#[test]
fn shipped_desk_config_matches_the_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = RunConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    let desk = RunConfig::desk();
    assert_eq!(cfg.model, desk.model);
    assert_eq!(cfg.train.lr_main, desk.train.lr_main);
    assert_eq!(cfg.train.iters_pretrain, desk.train.iters_pretrain);
    assert_eq!(cfg.data.mode, DataMode::Paired);
}
