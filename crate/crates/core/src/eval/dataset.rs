//! Paired low/normal-light datasets stored as matching file names in two directories.
use std::path::{Path, PathBuf};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Directory names of the two sides of a pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub low: String,
    pub high: String,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            low: "low".into(),
            high: "high".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePair {
    pub name: String,
    pub low: PathBuf,
    pub high: PathBuf,
}

impl ImagePair {
    /// File name without extension.
    pub fn stem(&self) -> &str {
        Path::new(&self.name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.name)
    }
}

#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub root: PathBuf,
    pub split: Split,
    pub pairs: Vec<ImagePair>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// PNG file names in `dir`, sorted lexicographically by byte value.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_png = Path::new(&name)
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Pairs `root/<low>/X` with `root/<high>/X`. Any unmatched file is an error.
pub fn load_paired_dataset(root: impl AsRef<Path>, layout: &Layout, split: Split) -> Result<PairedDataset> {
    let root = root.as_ref();
    let (low_dir, high_dir) = (root.join(&layout.low), root.join(&layout.high));
    let lows = list_images(&low_dir)?;
    let highs = list_images(&high_dir)?;
    if let Some(orphan) = lows.iter().find(|n| highs.binary_search(n).is_err()) {
        return Err(Error::Dataset(format!(
            "{} has no counterpart in {}",
            low_dir.join(orphan).display(),
            high_dir.display()
        )));
    }
    if let Some(orphan) = highs.iter().find(|n| lows.binary_search(n).is_err()) {
        return Err(Error::Dataset(format!(
            "{} has no counterpart in {}",
            high_dir.join(orphan).display(),
            low_dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(lows.len());
    for name in lows {
        let pair = ImagePair {
            low: low_dir.join(&name),
            high: high_dir.join(&name),
            name,
        };
        let dl = image::image_dimensions(&pair.low).map_err(|e| Error::format(&pair.low, e.to_string()))?;
        let dh = image::image_dimensions(&pair.high).map_err(|e| Error::format(&pair.high, e.to_string()))?;
        if dl != dh {
            return Err(Error::Dataset(format!(
                "{}: low is {}×{} but high is {}×{}",
                pair.name, dl.0, dl.1, dh.0, dh.1
            )));
        }
        pairs.push(pair);
    }
    Ok(PairedDataset {
        root: root.to_path_buf(),
        split,
        pairs,
    })
}

/// LOL-v1: `our485/` for training and `eval15/` for testing, each with `low/` and `high/`.
pub fn load_lol_v1(root: impl AsRef<Path>) -> Result<(PairedDataset, PairedDataset)> {
    let root = root.as_ref();
    let layout = Layout::default();
    Ok((
        load_paired_dataset(root.join("our485"), &layout, Split::Train)?,
        load_paired_dataset(root.join("eval15"), &layout, Split::Test)?,
    ))
}

/// Location of the timestamp map belonging to `pair` inside a dataset root.
pub fn fpe_path(root: &Path, pair: &ImagePair) -> PathBuf {
    root.join("fpe").join(format!("{}.fpe", pair.stem()))
}
