//! Stage datasets: manifests of labelled image paths, stratified splitting,
//! and the preprocessing/augmentation transforms.
//!
//! A stage root holds one subdirectory per class, named after the class
//! (`impure/`, `pure/`, ...). Decodable formats are PNG, JPEG and BMP.

mod split;
pub mod synthetic;
mod transforms;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use split::{split_manifest, split_sizes, SplitRatios};
pub use transforms::{
    augment, augment_pixels, denormalize, normalize, resize, train_transforms, val_transforms, AugmentConfig, AugmentParams,
    PixelImage, IMAGENET_MEAN, IMAGENET_STD,
};

use crate::labels::Stage;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a {stage} class directory (expected one of {expected:?})")]
    UnknownClass { path: PathBuf, stage: Stage, expected: [&'static str; 2] },
    #[error("no decodable images under {0}")]
    NoImages(PathBuf),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("class {class:?} has {count} samples; at least 3 are needed to populate every split")]
    ClassTooSmall { class: String, count: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios(SplitRatios),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{split} split is empty")]
    EmptySplit { split: Split },
}

type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub label: usize,
    pub split: Option<Split>,
}

/// Labelled images of one stage. Paths are unique; labels index
/// [`Stage::class_names`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub stage: Stage,
    pub records: Vec<ManifestRecord>,
    /// Files that were present but could not be decoded.
    pub skipped: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    path: PathBuf,
    stage: u8,
    class: String,
    split: String,
}

impl DatasetManifest {
    pub fn new(stage: Stage, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.label >= 2 {
                return Err(DataError::Manifest(format!("label {} out of range for {stage}", r.label)));
            }
            if !seen.insert(&r.path) {
                return Err(DataError::Manifest(format!("duplicate path {}", r.path.display())));
            }
        }
        Ok(DatasetManifest { stage, records, skipped: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    pub fn split_counts(&self, split: Split) -> [usize; 2] {
        let mut counts = [0; 2];
        for r in self.records.iter().filter(|r| r.split == Some(split)) {
            counts[r.label] += 1;
        }
        counts
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    /// Samples of one split, loaded lazily from disk.
    pub fn samples(&self, split: Split) -> Vec<Sample> {
        self.records_in(split).map(|r| Sample { image: ImageRef::Path(r.path.clone()), label: r.label }).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                path: r.path.clone(),
                stage: self.stage.number(),
                class: self.stage.class_names()[r.label].to_string(),
                split: r.split.map_or("", Split::as_str).to_string(),
            })
            .map_err(|e| DataError::Manifest(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| DataError::Manifest(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut stage = None;
        let mut records = Vec::new();
        for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| DataError::Manifest(e.to_string()))?;
            let bad = |msg: String| DataError::Manifest(format!("row {}: {msg}", line + 1));
            let s = Stage::try_from(row.stage).map_err(bad)?;
            if *stage.get_or_insert(s) != s {
                return Err(bad("mixes stages".into()));
            }
            let label = s.class_index(&row.class).ok_or_else(|| bad(format!("class {:?} not in {s}", row.class)))?;
            let split = match row.split.as_str() {
                "" => None,
                other => Some(other.parse().map_err(bad)?),
            };
            records.push(ManifestRecord { path: row.path, label, split });
        }
        let stage = stage.ok_or_else(|| DataError::Manifest("no rows".into()))?;
        Self::new(stage, records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        Self::from_csv(&text)
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |source| DataError::Io { path: dir.to_path_buf(), source };
    let mut entries = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io)?;
    entries.sort();
    Ok(entries)
}

/// Scans `root/<class>/*` for one stage. Undecodable files are skipped with
/// a warning and listed in [`DatasetManifest::skipped`].
pub fn build_manifest(root: &Path, stage: Stage) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for dir in read_dir_sorted(root)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let label = stage.class_index(&name).ok_or_else(|| DataError::UnknownClass {
            path: dir.clone(),
            stage,
            expected: stage.class_names(),
        })?;
        for file in read_dir_sorted(&dir)? {
            if !file.is_file() {
                continue;
            }
            match image::open(&file) {
                Ok(_) => records.push(ManifestRecord { path: file, label, split: None }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    skipped.push(file);
                }
            }
        }
    }
    if records.is_empty() {
        return Err(DataError::NoImages(root.to_path_buf()));
    }
    let mut manifest = DatasetManifest::new(stage, records)?;
    manifest.skipped = skipped;
    Ok(manifest)
}

/// An image held in memory or read from disk on demand.
#[derive(Clone, Debug)]
pub enum ImageRef {
    Path(PathBuf),
    Memory(Arc<RgbImage>),
}

impl ImageRef {
    pub fn load(&self) -> Result<Arc<RgbImage>> {
        match self {
            ImageRef::Memory(img) => Ok(Arc::clone(img)),
            ImageRef::Path(path) => image::open(path)
                .map(|img| Arc::new(img.into_rgb8()))
                .map_err(|e| DataError::Decode { path: path.clone(), reason: e.to_string() }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: ImageRef,
    pub label: usize,
}

/// Decodes an encoded image (any supported format) to RGB.
pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory(bytes)?.into_rgb8())
}
