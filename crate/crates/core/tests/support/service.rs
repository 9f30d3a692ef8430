//! Stub stage models, multipart bodies and checkpoint fixtures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use cornvit::backbone::{BackboneConfig, StageModel};
use cornvit::cascade::{CascadeError, Preprocessor, StageClassifier, ValPreprocessor};
use cornvit::labels::Stage;
use cornvit::service::InferenceEngine;
use cornvit::tensor::Tensor;
use cornvit::training::save_checkpoint;
use image::{ImageFormat, Rgb, RgbImage};

pub const BOUNDARY: &str = "cornvit-test-boundary";

/// Votes for `class` with logits `(2, 0)` or `(0, 2)`.
pub struct Stub {
    pub stage: Stage,
    pub class: usize,
    pub calls: AtomicUsize,
}

impl StageClassifier for Stub {
    fn stage(&self) -> Option<Stage> {
        Some(self.stage)
    }

    fn logits(&self, _: &Tensor<f32>) -> Result<[f32; 2], CascadeError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(if self.class == 0 { [2.0, 0.0] } else { [0.0, 2.0] })
    }
}

pub struct StubSet {
    pub stubs: [Arc<Stub>; 3],
}

impl StubSet {
    pub fn new(classes: [usize; 3]) -> Self {
        let stubs = [0, 1, 2].map(|i| {
            Arc::new(Stub { stage: Stage::ALL[i], class: classes[i], calls: AtomicUsize::new(0) })
        });
        StubSet { stubs }
    }

    pub fn engine(&self) -> InferenceEngine {
        let stages = self.stubs.clone().map(|s| s as Arc<dyn StageClassifier>);
        let pre: Arc<dyn Preprocessor> = Arc::new(ValPreprocessor { resolution: 8 });
        InferenceEngine::new(stages, pre, fixed_versions()).unwrap()
    }

    pub fn calls(&self) -> [usize; 3] {
        self.stubs.each_ref().map(|s| s.calls.load(Ordering::SeqCst))
    }
}

pub fn fixed_versions() -> BTreeMap<String, String> {
    Stage::ALL.iter().map(|s| (s.key().to_string(), format!("test-{}", s.number()))).collect()
}

pub fn multipart(parts: &[(&str, &str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, filename, data) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        body.extend_from_slice(
            format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{filename}\"\r\n").as_bytes(),
        );
        body.extend_from_slice(b"Content-Type: application/octet-stream\r\n\r\n");
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

/// Smooth, seed-dependent test image.
pub fn test_image(seed: u32, side: u32) -> RgbImage {
    RgbImage::from_fn(side, side, |x, y| {
        let v = |k: u32| ((x * (3 + k) + y * (5 + seed) + seed * 17 + k * 40) % 256) as u8;
        Rgb([v(0), v(1), v(2)])
    })
}

/// Untrained tiny models saved as tagged checkpoints under `dir`.
pub fn write_checkpoints(dir: &Path) -> [PathBuf; 3] {
    Stage::ALL.map(|stage| {
        let model = StageModel::<f32>::new(BackboneConfig::tiny(), 10 + stage.number() as u64).unwrap().with_stage(stage);
        let path = dir.join(format!("stage{}.ckpt", stage.number()));
        save_checkpoint(&model, None, &path).unwrap();
        path
    })
}
