//! HTTP inference service.
//!
//! `GET /health` answers `{"status": "ok", "model_versions": {...}}`.
//!
//! `POST /analyze` takes a multipart upload with the image in field `image`
//! and answers an [`AnalyzeResponse`]:
//!
//! ```json
//! {
//!   "stage1": {"status": "predicted", "prediction": "pure", "confidence": 0.97,
//!              "probabilities": {"impure": 0.03, "pure": 0.97}},
//!   "stage2": {"status": "predicted", "prediction": "round", ...},
//!   "stage3": {"status": "not_applicable"},
//!   "summary": "(pure, round, –)",
//!   "model_versions": {"stage1": "<sha256>", "stage2": "<sha256>", "stage3": "<sha256>"}
//! }
//! ```
//!
//! Errors are `{"error": <code>, "message": <text>}` with codes
//! `invalid_multipart`, `missing_image`, `undecodable_image` (all 400) and
//! `payload_too_large` (413). Models are loaded once and shared read-only;
//! inference runs on the blocking thread pool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{infer_hierarchical, CascadeError, HierarchicalLabel, Preprocessor, StageClassifier, ValPreprocessor};
use crate::config::ServiceConfig;
use crate::data::decode_rgb;
use crate::labels::Stage;
use crate::training::{file_sha256, load_checkpoint, CheckpointError};

pub const IMAGE_FIELD: &str = "image";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("stage {} checkpoint {}: {source}", stage.number(), path.display())]
    Checkpoint { stage: Stage, path: PathBuf, source: CheckpointError },
    #[error("stage {} expects {found}px input but stage 1 expects {expected}px", stage.number())]
    Resolution { stage: Stage, expected: usize, found: usize },
    #[error("image could not be decoded: {0}")]
    Decode(#[from] image::ImageError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageResult {
    Predicted { prediction: String, confidence: f64, probabilities: BTreeMap<String, f64> },
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub stage1: StageResult,
    pub stage2: StageResult,
    pub stage3: StageResult,
    pub summary: String,
    pub model_versions: BTreeMap<String, String>,
}

impl AnalyzeResponse {
    pub fn from_label(label: &HierarchicalLabel, model_versions: BTreeMap<String, String>) -> Self {
        let result = |stage: Stage| match label.decision(stage) {
            None => StageResult::NotApplicable,
            Some(d) => StageResult::Predicted {
                prediction: d.class_name().to_string(),
                confidence: d.confidence(),
                probabilities: stage.class_names().iter().map(|c| c.to_string()).zip(d.probabilities).collect(),
            },
        };
        AnalyzeResponse {
            stage1: result(Stage::Purity),
            stage2: result(Stage::Shape),
            stage3: result(Stage::Embryo),
            summary: label.summary(),
            model_versions,
        }
    }

    pub fn stage(&self, stage: Stage) -> &StageResult {
        match stage {
            Stage::Purity => &self.stage1,
            Stage::Shape => &self.stage2,
            Stage::Embryo => &self.stage3,
        }
    }
}

/// The three stage models plus shared preprocessing.
pub struct InferenceEngine {
    stages: [Arc<dyn StageClassifier>; 3],
    preprocessor: Arc<dyn Preprocessor>,
    model_versions: BTreeMap<String, String>,
}

impl InferenceEngine {
    pub fn new(
        stages: [Arc<dyn StageClassifier>; 3],
        preprocessor: Arc<dyn Preprocessor>,
        model_versions: BTreeMap<String, String>,
    ) -> Result<Self, ServiceError> {
        for (model, stage) in stages.iter().zip(Stage::ALL) {
            if model.stage() != Some(stage) {
                return Err(CascadeError::StageMismatch { expected: stage, found: model.stage() }.into());
            }
        }
        Ok(InferenceEngine { stages, preprocessor, model_versions })
    }

    /// Loads and tag-checks one checkpoint per stage. Versions are the
    /// files' SHA-256 digests.
    pub fn from_checkpoints(paths: [&Path; 3]) -> Result<Self, ServiceError> {
        let mut models: Vec<Arc<dyn StageClassifier>> = Vec::with_capacity(3);
        let mut versions = BTreeMap::new();
        let mut resolution = None;
        for (path, stage) in paths.into_iter().zip(Stage::ALL) {
            let fail = |source| ServiceError::Checkpoint { stage, path: path.to_path_buf(), source };
            let ckpt = load_checkpoint(path, Some(stage)).map_err(fail)?;
            versions.insert(stage.key().to_string(), file_sha256(path).map_err(fail)?);
            let found = ckpt.model.config().input_resolution;
            let expected = *resolution.get_or_insert(found);
            if found != expected {
                return Err(ServiceError::Resolution { stage, expected, found });
            }
            models.push(Arc::new(ckpt.model));
        }
        let stages: [Arc<dyn StageClassifier>; 3] = models.try_into().unwrap_or_else(|_| unreachable!());
        let preprocessor = Arc::new(ValPreprocessor { resolution: resolution.expect("three stages") });
        Self::new(stages, preprocessor, versions)
    }

    pub fn model_versions(&self) -> &BTreeMap<String, String> {
        &self.model_versions
    }

    pub fn infer(&self, image: &RgbImage) -> Result<HierarchicalLabel, CascadeError> {
        let [f1, f2, f3] = &self.stages;
        infer_hierarchical(f1.as_ref(), f2.as_ref(), f3.as_ref(), self.preprocessor.as_ref(), image)
    }

    pub fn analyze_image(&self, image: &RgbImage) -> Result<AnalyzeResponse, ServiceError> {
        Ok(AnalyzeResponse::from_label(&self.infer(image)?, self.model_versions.clone()))
    }

    pub fn analyze_bytes(&self, bytes: &[u8]) -> Result<AnalyzeResponse, ServiceError> {
        self.analyze_image(&decode_rgb(bytes)?)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

fn error(status: StatusCode, code: &'static str, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: code, message: message.into() })).into_response()
}

async fn health(State(engine): State<Arc<InferenceEngine>>) -> Response {
    Json(serde_json::json!({ "status": "ok", "model_versions": engine.model_versions() })).into_response()
}

async fn analyze(
    State(engine): State<Arc<InferenceEngine>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Response {
    let mut multipart = match multipart {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_multipart", e.body_text()),
    };
    let mut bytes = None;
    loop {
        match multipart.next_field().await {
            Ok(Some(field)) if field.name() == Some(IMAGE_FIELD) => match field.bytes().await {
                Ok(b) => {
                    bytes = Some(b);
                    break;
                }
                Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
                    return error(e.status(), "payload_too_large", e.body_text())
                }
                Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_multipart", e.body_text()),
            },
            Ok(Some(_)) => continue,
            Ok(None) => break,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
                return error(e.status(), "payload_too_large", e.body_text())
            }
            Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_multipart", e.body_text()),
        }
    }
    let Some(bytes) = bytes else {
        return error(StatusCode::BAD_REQUEST, "missing_image", format!("no multipart field named {IMAGE_FIELD:?}"));
    };
    let outcome = tokio::task::spawn_blocking(move || engine.analyze_bytes(&bytes)).await;
    match outcome {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(ServiceError::Decode(e))) => error(StatusCode::BAD_REQUEST, "undecodable_image", e.to_string()),
        Ok(Err(e)) => {
            log::error!("analyze failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

pub fn router(engine: Arc<InferenceEngine>, max_upload_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/analyze", post(analyze))
        .layer(DefaultBodyLimit::max(max_upload_bytes))
        .with_state(engine)
}

pub async fn serve(engine: Arc<InferenceEngine>, cfg: &ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((cfg.host.as_str(), cfg.port)).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(engine, cfg.max_upload_bytes)).await
}
