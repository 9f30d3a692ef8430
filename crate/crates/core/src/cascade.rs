//! Hierarchical inference: purity, then shape for pure kernels, then embryo
//! orientation for flat ones.
//!
//! ```text
//! impure                 -> (impure, –, –)
//! pure, round            -> (pure, round, –)
//! pure, flat, up | down  -> (pure, flat, embryo_up | embryo_down)
//! ```

use image::RgbImage;
use serde::Serialize;
use thiserror::Error;

use crate::backbone::{BackboneError, StageModel};
use crate::data::val_transforms;
use crate::labels::{Embryo, Purity, Shape, Stage};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("model for {expected} carries tag {found:?}")]
    StageMismatch { expected: Stage, found: Option<Stage> },
    #[error("expected 2 logits, got {0}")]
    Logits(usize),
    #[error("{name} = {value} outside [0, 1]")]
    Range { name: &'static str, value: f64 },
    #[error(transparent)]
    Model(#[from] BackboneError),
}

type Result<T> = std::result::Result<T, CascadeError>;

/// Anything that maps one preprocessed `[3, R, R]` image to two logits.
pub trait StageClassifier: Send + Sync {
    fn stage(&self) -> Option<Stage>;

    fn logits(&self, image: &Tensor<f32>) -> Result<[f32; 2]>;
}

impl StageClassifier for StageModel<f32> {
    fn stage(&self) -> Option<Stage> {
        StageModel::stage(self)
    }

    fn logits(&self, image: &Tensor<f32>) -> Result<[f32; 2]> {
        let mut shape = vec![1];
        shape.extend_from_slice(image.shape());
        let out = self.forward(&image.reshape(shape).map_err(BackboneError::from)?)?;
        match *out.data() {
            [a, b] => Ok([a, b]),
            _ => Err(CascadeError::Logits(out.numel())),
        }
    }
}

pub trait Preprocessor: Send + Sync {
    fn preprocess(&self, image: &RgbImage) -> Tensor<f32>;
}

/// Validation preprocessing at a fixed resolution.
#[derive(Clone, Copy, Debug)]
pub struct ValPreprocessor {
    pub resolution: usize,
}

impl Preprocessor for ValPreprocessor {
    fn preprocess(&self, image: &RgbImage) -> Tensor<f32> {
        val_transforms(image, self.resolution)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageDecision {
    pub stage: Stage,
    pub predicted: usize,
    /// Softmax over the logits, in the stage's class order.
    pub probabilities: [f64; 2],
}

impl StageDecision {
    /// Softmax of the logits; an exact tie goes to class 0.
    pub fn from_logits(stage: Stage, logits: [f32; 2]) -> Self {
        let (a, b) = (logits[0] as f64, logits[1] as f64);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let probabilities = [ea / (ea + eb), eb / (ea + eb)];
        let predicted = usize::from(probabilities[1] > probabilities[0]);
        StageDecision { stage, predicted, probabilities }
    }

    pub fn class_name(&self) -> &'static str {
        self.stage.class_names()[self.predicted]
    }

    pub fn confidence(&self) -> f64 {
        self.probabilities[self.predicted]
    }
}

pub fn classify_stage(model: &dyn StageClassifier, image: &Tensor<f32>, stage: Stage) -> Result<StageDecision> {
    if model.stage() != Some(stage) {
        return Err(CascadeError::StageMismatch { expected: stage, found: model.stage() });
    }
    Ok(StageDecision::from_logits(stage, model.logits(image)?))
}

/// `(y1, y2, y3)` with skipped stages left undefined.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HierarchicalLabel {
    pub purity: Purity,
    pub shape: Option<Shape>,
    pub embryo: Option<Embryo>,
    /// Executed stages, in order.
    pub decisions: Vec<StageDecision>,
}

impl HierarchicalLabel {
    pub fn decision(&self, stage: Stage) -> Option<&StageDecision> {
        self.decisions.iter().find(|d| d.stage == stage)
    }

    /// `(pure, flat, embryo_up)`, with `–` for undefined members.
    pub fn summary(&self) -> String {
        let shape = self.shape.map_or("–", Shape::name);
        let embryo = self.embryo.map_or("–", Embryo::name);
        format!("({}, {shape}, {embryo})", self.purity)
    }
}

/// Three stage classifiers sharing one preprocessing step.
pub struct Cascade<C, P> {
    pub stages: [C; 3],
    pub preprocessor: P,
}

impl<C: StageClassifier, P: Preprocessor> Cascade<C, P> {
    pub fn new(stage1: C, stage2: C, stage3: C, preprocessor: P) -> Result<Self> {
        for (model, stage) in [&stage1, &stage2, &stage3].into_iter().zip(Stage::ALL) {
            if model.stage() != Some(stage) {
                return Err(CascadeError::StageMismatch { expected: stage, found: model.stage() });
            }
        }
        Ok(Cascade { stages: [stage1, stage2, stage3], preprocessor })
    }

    pub fn infer(&self, image: &RgbImage) -> Result<HierarchicalLabel> {
        let [f1, f2, f3] = &self.stages;
        infer_hierarchical(f1, f2, f3, &self.preprocessor, image)
    }
}

/// Preprocesses once and reuses the tensor for every stage that runs.
pub fn infer_hierarchical(
    f1: &dyn StageClassifier,
    f2: &dyn StageClassifier,
    f3: &dyn StageClassifier,
    preprocessor: &dyn Preprocessor,
    image: &RgbImage,
) -> Result<HierarchicalLabel> {
    let x = preprocessor.preprocess(image);
    let d1 = classify_stage(f1, &x, Stage::Purity)?;
    let purity = Purity::from_index(d1.predicted).expect("binary");
    let mut label = HierarchicalLabel { purity, shape: None, embryo: None, decisions: vec![d1] };
    if purity == Purity::Impure {
        return Ok(label);
    }
    let d2 = classify_stage(f2, &x, Stage::Shape)?;
    let shape = Shape::from_index(d2.predicted).expect("binary");
    label.shape = Some(shape);
    label.decisions.push(d2);
    if shape == Shape::Round {
        return Ok(label);
    }
    let d3 = classify_stage(f3, &x, Stage::Embryo)?;
    label.embryo = Some(Embryo::from_index(d3.predicted).expect("binary"));
    label.decisions.push(d3);
    Ok(label)
}

/// Probability that all three stages are right, assuming independent errors.
pub fn joint_accuracy_estimate(acc1: f64, acc2: f64, acc3: f64) -> Result<f64> {
    for (name, value) in [("acc1", acc1), ("acc2", acc2), ("acc3", acc3)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(CascadeError::Range { name, value });
        }
    }
    Ok(acc1 * acc2 * acc3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_logits_tie_to_lower_index() {
        for stage in Stage::ALL {
            let d = StageDecision::from_logits(stage, [0.0, 0.0]);
            assert_eq!(d.probabilities, [0.5, 0.5]);
            assert_eq!(d.predicted, 0);
        }
        assert_eq!(StageDecision::from_logits(Stage::Purity, [0.0, 0.0]).class_name(), "impure");
    }

    #[test]
    fn softmax_closed_form() {
        let d = StageDecision::from_logits(Stage::Shape, [2.0, 0.0]);
        let p0 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((d.probabilities[0] - p0).abs() < 1e-15);
        assert!((d.probabilities[0] - 0.8808).abs() < 1e-4 && (d.probabilities[1] - 0.1192).abs() < 1e-4);
        assert_eq!(d.class_name(), "flat");
        assert_eq!(d.confidence(), d.probabilities[0]);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let d = StageDecision::from_logits(Stage::Embryo, [-1e30, 1e30]);
        assert_eq!(d.probabilities, [0.0, 1.0]);
    }

    #[test]
    fn joint_accuracy() {
        assert_eq!(joint_accuracy_estimate(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(joint_accuracy_estimate(0.5, 1.0, 1.0).unwrap(), 0.5);
        assert!(joint_accuracy_estimate(1.1, 1.0, 1.0).is_err());
        assert!(joint_accuracy_estimate(0.9, f64::NAN, 1.0).is_err());
    }
}
