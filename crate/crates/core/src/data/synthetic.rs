//! Generated two-class images for exercising the training loop without the
//! real dataset. Class 0 has a bright disc in the top half, class 1 in the
//! bottom half, on a noisy dark background.

use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetManifest, ImageRef, ManifestRecord, Sample, Split};
use crate::labels::Stage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub resolution: u32,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    /// Half-width of the uniform per-channel noise.
    pub noise: u8,
    /// Disc radius range as fractions of the side.
    pub radius: (f32, f32),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { resolution: 64, train: 400, val: 100, test: 100, seed: 0, noise: 20, radius: (0.17, 0.23) }
    }
}

pub struct SyntheticSet {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SyntheticSet {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

const BACKGROUND: u8 = 40;
const BLOB: u8 = 230;

pub fn render(label: usize, side: u32, noise: u8, radius: (f32, f32), rng: &mut impl Rng) -> RgbImage {
    let half = side / 2;
    let lo = ((radius.0 * side as f32).round() as u32).max(1);
    let hi = ((radius.1 * side as f32).round() as u32).clamp(lo, (half - 1) / 2);
    let radius = rng.random_range(lo..=hi) as i64;
    let cx = rng.random_range(radius..side as i64 - radius);
    let top = if label == 0 { 0 } else { half as i64 };
    let cy = rng.random_range(top + radius..top + half as i64 - radius);
    RgbImage::from_fn(side, side, |x, y| {
        let (dx, dy) = (x as i64 - cx, y as i64 - cy);
        let base = if dx * dx + dy * dy <= radius * radius { BLOB } else { BACKGROUND };
        let jitter = |rng: &mut dyn rand::RngCore| {
            let n = rng.random_range(-(noise as i16)..=noise as i16);
            (base as i16 + n).clamp(0, 255) as u8
        };
        Rgb([jitter(rng), jitter(rng), jitter(rng)])
    })
}

fn balanced(n: usize, rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Vec<Sample> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(rng);
    labels
        .into_iter()
        .map(|label| Sample { image: ImageRef::Memory(Arc::new(render(label, cfg.resolution, cfg.noise, cfg.radius, rng))), label })
        .collect()
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = balanced(cfg.train, &mut rng, cfg);
    let val = balanced(cfg.val, &mut rng, cfg);
    let test = balanced(cfg.test, &mut rng, cfg);
    SyntheticSet { train, val, test }
}

/// Writes the set as PNGs under `root/<class>/` using `stage`'s class
/// names, and returns a manifest carrying the fixed split assignment.
pub fn write_dataset(cfg: &SyntheticConfig, stage: Stage, root: &Path) -> Result<DatasetManifest, DataError> {
    let set = generate(cfg);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    for class in stage.class_names() {
        std::fs::create_dir_all(root.join(class)).map_err(io(&root.join(class)))?;
    }
    let mut records = Vec::new();
    for split in Split::ALL {
        for (i, sample) in set.split(split).iter().enumerate() {
            let path = root.join(stage.class_names()[sample.label]).join(format!("{split}_{i:04}.png"));
            let img = sample.image.load()?;
            img.save(&path).map_err(|e| DataError::Decode { path: path.clone(), reason: e.to_string() })?;
            records.push(ManifestRecord { path, label: sample.label, split: Some(split) });
        }
    }
    DatasetManifest::new(stage, records)
}
