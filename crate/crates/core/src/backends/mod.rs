//! The five external model capabilities and their implementations.
//!
//! Each capability is a trait so the orchestration layers never know whether
//! they talk to an HTTP service ([`remote`]) or a deterministic in-process
//! stand-in ([`mock`]).

pub mod mock;
pub mod remote;
pub mod retry;

use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{BitMask, BoxRegion, GeometryError, RleMask, SegPrompt};
use crate::prompts::PromptText;

pub use mock::{
    MockCaptioner, MockOcr, MockRefiner, MockSegmenter, MockVqa, ScriptedRefiner,
};
pub use remote::RemoteBackend;
pub use retry::{call_with_retry, HttpResponse, RetryPolicy, Transport, TransportError};

/// Markers that flag a refiner response as a refusal when it starts with one.
pub const DEFAULT_REFUSAL_MARKERS: &[&str] = &["I cannot", "I'm sorry"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend rejected request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("segmenter returned no mask")]
    NoMask,
    #[error("captioner returned an empty caption")]
    EmptyCaption,
    #[error("refiner refused: {0}")]
    Refusal(String),
    #[error("invalid backend request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

impl From<GeometryError> for BackendError {
    fn from(e: GeometryError) -> Self {
        BackendError::MalformedResponse(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Segmenter,
    Captioner,
    Refiner,
    Vqa,
    Ocr,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] = [
        BackendKind::Segmenter,
        BackendKind::Captioner,
        BackendKind::Refiner,
        BackendKind::Vqa,
        BackendKind::Ocr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Segmenter => "segmenter",
            BackendKind::Captioner => "captioner",
            BackendKind::Refiner => "refiner",
            BackendKind::Vqa => "vqa",
            BackendKind::Ocr => "ocr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Remote,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub mode: BackendMode,
    /// Base URL; required iff `mode` is remote.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub bearer_token: Option<String>,
    pub refusal_markers: Vec<String>,
    /// Mock fixture: refiner script or OCR lines.
    pub fixture: Option<PathBuf>,
}

impl BackendConfig {
    pub fn mock(kind: BackendKind) -> Self {
        Self {
            kind,
            mode: BackendMode::Mock,
            endpoint: None,
            timeout_ms: 30_000,
            max_attempts: 3,
            bearer_token: None,
            refusal_markers: DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect(),
            fixture: None,
        }
    }

    pub fn remote(kind: BackendKind, endpoint: impl Into<String>) -> Self {
        Self {
            mode: BackendMode::Remote,
            endpoint: Some(endpoint.into()),
            ..Self::mock(kind)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_attempts == 0 {
            return Err(BackendError::Config(format!(
                "{}: max_attempts must be at least 1",
                self.kind
            )));
        }
        match (self.mode, &self.endpoint) {
            (BackendMode::Remote, None) => Err(BackendError::Config(format!(
                "{}: remote mode needs an endpoint",
                self.kind
            ))),
            (BackendMode::Mock, Some(_)) => Err(BackendError::Config(format!(
                "{}: endpoint given but mode is mock",
                self.kind
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationCandidate {
    pub mask: RleMask,
    pub score: f64,
}

/// A line of scene text found by OCR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrLine {
    pub text: String,
    #[serde(rename = "box")]
    pub region: BoxRegion,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl OcrLine {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.text.is_empty() {
            return Err(BackendError::MalformedResponse("empty OCR text".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(BackendError::MalformedResponse(format!(
                "OCR confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

pub trait Segmenter: Send + Sync {
    fn segment(
        &self,
        image: &RgbImage,
        prompt: &SegPrompt,
    ) -> Result<Vec<SegmentationCandidate>, BackendError>;

    fn segment_everything(&self, image: &RgbImage) -> Result<Vec<BitMask>, BackendError>;

    fn probe(&self) -> bool {
        true
    }
}

pub trait Captioner: Send + Sync {
    /// Describes `region`, conditioned on `prefix` (may be empty).
    fn caption(&self, region: &RgbImage, prefix: &str) -> Result<String, BackendError>;

    fn probe(&self) -> bool {
        true
    }
}

pub trait Refiner: Send + Sync {
    fn refine(&self, prompt: &PromptText) -> Result<String, BackendError>;

    fn probe(&self) -> bool {
        true
    }
}

pub trait Vqa: Send + Sync {
    fn vqa(&self, region: &RgbImage, question: &str) -> Result<String, BackendError>;

    fn probe(&self) -> bool {
        true
    }
}

pub trait Ocr: Send + Sync {
    fn ocr(&self, image: &RgbImage) -> Result<Vec<OcrLine>, BackendError>;

    fn probe(&self) -> bool {
        true
    }
}

/// One implementation per capability.
#[derive(Clone)]
pub struct Backends {
    pub segmenter: Arc<dyn Segmenter>,
    pub captioner: Arc<dyn Captioner>,
    pub refiner: Arc<dyn Refiner>,
    pub vqa: Arc<dyn Vqa>,
    pub ocr: Arc<dyn Ocr>,
}

impl Backends {
    /// All-mock bundle with default mock rules and no fixtures.
    pub fn mock() -> Self {
        Self {
            segmenter: Arc::new(MockSegmenter),
            captioner: Arc::new(MockCaptioner),
            refiner: Arc::new(MockRefiner::default()),
            vqa: Arc::new(MockVqa),
            ocr: Arc::new(MockOcr::default()),
        }
    }

    /// Builds one backend per kind. Kinds without a config fall back to mocks.
    pub fn from_configs(configs: &[BackendConfig]) -> Result<Self, BackendError> {
        let mut out = Self::mock();
        for cfg in configs {
            cfg.validate()?;
            match cfg.mode {
                BackendMode::Remote => {
                    let remote = Arc::new(RemoteBackend::new(cfg.clone())?);
                    match cfg.kind {
                        BackendKind::Segmenter => out.segmenter = remote,
                        BackendKind::Captioner => out.captioner = remote,
                        BackendKind::Refiner => out.refiner = remote,
                        BackendKind::Vqa => out.vqa = remote,
                        BackendKind::Ocr => out.ocr = remote,
                    }
                }
                BackendMode::Mock => match cfg.kind {
                    BackendKind::Refiner => {
                        out.refiner = match &cfg.fixture {
                            Some(path) => Arc::new(
                                ScriptedRefiner::from_file(path)?
                                    .with_refusal_markers(cfg.refusal_markers.clone()),
                            ),
                            None => Arc::new(MockRefiner::new(cfg.refusal_markers.clone())),
                        }
                    }
                    BackendKind::Ocr => {
                        if let Some(path) = &cfg.fixture {
                            out.ocr = Arc::new(MockOcr::from_file(path)?);
                        }
                    }
                    _ => {}
                },
            }
        }
        Ok(out)
    }

    /// Reachability per kind.
    pub fn health(&self) -> Vec<(BackendKind, bool)> {
        vec![
            (BackendKind::Segmenter, self.segmenter.probe()),
            (BackendKind::Captioner, self.captioner.probe()),
            (BackendKind::Refiner, self.refiner.probe()),
            (BackendKind::Vqa, self.vqa.probe()),
            (BackendKind::Ocr, self.ocr.probe()),
        ]
    }
}

/// Lowercase hex SHA-256 over the raster size (big-endian u32 width, height)
/// followed by its raw RGB bytes.
pub fn image_digest(image: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(image.width().to_be_bytes());
    h.update(image.height().to_be_bytes());
    h.update(image.as_raw());
    hex::encode(h.finalize())
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Trims a refiner response and rejects refusals and empty text.
pub fn check_refusal(text: &str, markers: &[String]) -> Result<String, BackendError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(BackendError::MalformedResponse("empty refiner response".into()));
    }
    if markers.iter().any(|m| !m.is_empty() && text.starts_with(m.as_str())) {
        return Err(BackendError::Refusal(text.to_string()));
    }
    Ok(text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn markers() -> Vec<String> {
        DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn refusal_markers() {
        assert!(matches!(
            check_refusal("I'm sorry, I can't help", &markers()),
            Err(BackendError::Refusal(_))
        ));
        assert!(matches!(
            check_refusal("  I cannot do that", &markers()),
            Err(BackendError::Refusal(_))
        ));
        assert_eq!(check_refusal(" fine \n", &markers()).unwrap(), "fine");
        assert!(check_refusal("   ", &markers()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::mock(BackendKind::Vqa).validate().is_ok());
        assert!(BackendConfig::remote(BackendKind::Vqa, "http://x").validate().is_ok());
        let mut c = BackendConfig::remote(BackendKind::Vqa, "http://x");
        c.endpoint = None;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::mock(BackendKind::Ocr);
        c.max_attempts = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_depends_on_shape() {
        let a = RgbImage::new(2, 3);
        let b = RgbImage::new(3, 2);
        assert_ne!(image_digest(&a), image_digest(&b));
        assert_eq!(image_digest(&a), image_digest(&a.clone()));
        assert_eq!(image_digest(&a).len(), 64);
    }

    #[test]
    fn ocr_line_wire_form() {
        let line: OcrLine =
            serde_json::from_str(r#"{"text":"EXIT","box":[1,2,3,4],"conf":0.5}"#).unwrap();
        assert_eq!(line.region, BoxRegion::new(1, 2, 3, 4));
        assert!(line.validate().is_ok());
        let bad = OcrLine { confidence: 1.5, ..line };
        assert!(bad.validate().is_err());
    }
}
