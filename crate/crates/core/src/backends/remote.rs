//! JSON-over-HTTP client for remote model services.
//!
//! | path           | request                                         | response                              |
//! |----------------|-------------------------------------------------|---------------------------------------|
//! | `/segment`     | `image_b64`, `points`, `box`, `multimask`       | `candidates: [{rle, score}]`          |
//! | `/segment_all` | `image_b64`                                     | `masks: [{rle}]`                      |
//! | `/caption`     | `image_b64`, `prefix`                           | `text`                                |
//! | `/refine`      | `prompt`                                        | `text`                                |
//! | `/vqa`         | `image_b64`, `question`                         | `answer`                              |
//! | `/ocr`         | `image_b64`                                     | `lines: [{text, box, conf}]`          |
//!
//! Non-2xx responses carry `{"error": "..."}`. Images travel as base64 PNG.

use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::retry::UreqTransport;
use super::{
    call_with_retry, check_refusal, BackendConfig, BackendError, BackendKind, Captioner,
    OcrLine, Ocr, Refiner, RetryPolicy, Segmenter, SegmentationCandidate, Transport, Vqa,
};
use crate::geometry::{rle_decode, BitMask, BoxRegion, ImageDims, LabeledPoint, RleMask, SegPrompt};
use crate::prompts::PromptText;

/// Upper bound for health probes.
pub const PROBE_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_b64: String,
    pub points: Vec<LabeledPoint>,
    #[serde(rename = "box")]
    pub region: Option<BoxRegion>,
    pub multimask: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub rle: RleMask,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAllResponse {
    pub masks: Vec<WireMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMask {
    pub rle: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_b64: String,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRequest {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub image_b64: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrResponse {
    pub lines: Vec<OcrLine>,
}

pub fn encode_image_b64(image: &RgbImage) -> String {
    let mut png = Vec::new();
    image
        .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    base64::engine::general_purpose::STANDARD.encode(png)
}

pub fn decode_image_b64(data: &str) -> Result<RgbImage, BackendError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| BackendError::InvalidRequest(format!("bad base64 image: {e}")))?;
    image::load_from_memory(&bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| BackendError::InvalidRequest(format!("undecodable image: {e}")))
}

/// Remote implementation of every capability; one instance per configured kind.
pub struct RemoteBackend {
    config: BackendConfig,
    base: String,
    transport: Arc<dyn Transport>,
    policy: RetryPolicy,
    sleep: Arc<dyn Fn(Duration) + Send + Sync>,
}

impl RemoteBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Self::with_transport(config, Arc::new(UreqTransport::default()))
    }

    pub fn with_transport(
        config: BackendConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, BackendError> {
        config.validate()?;
        let base = config
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("remote backend needs an endpoint".into()))?
            .trim_end_matches('/')
            .to_string();
        let policy = RetryPolicy::new(config.max_attempts);
        Ok(Self {
            config,
            base,
            transport,
            policy,
            sleep: Arc::new(std::thread::sleep),
        })
    }

    /// Replaces the backoff sleeper; tests use this to avoid real waits.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.config.kind
    }

    fn path(kind: BackendKind) -> &'static str {
        match kind {
            BackendKind::Segmenter => "/segment",
            BackendKind::Captioner => "/caption",
            BackendKind::Refiner => "/refine",
            BackendKind::Vqa => "/vqa",
            BackendKind::Ocr => "/ocr",
        }
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        request: &Req,
    ) -> Result<Resp, BackendError> {
        let body = serde_json::to_vec(request)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let url = format!("{}{path}", self.base);
        let outcome = call_with_retry(
            &self.policy,
            self.transport.as_ref(),
            &url,
            &body,
            Duration::from_millis(self.config.timeout_ms),
            self.config.bearer_token.as_deref(),
            self.sleep.as_ref(),
        )?;
        serde_json::from_slice(&outcome.response.body)
            .map_err(|e| BackendError::MalformedResponse(format!("{url}: {e}")))
    }

    fn check_dims(rle: &RleMask, dims: ImageDims) -> Result<(), BackendError> {
        if rle.dims() != dims {
            return Err(BackendError::MalformedResponse(format!(
                "mask is {} but image is {dims}",
                rle.dims()
            )));
        }
        Ok(())
    }

    /// One short attempt; any HTTP response counts as reachable.
    fn probe_path(&self, path: &str) -> bool {
        let url = format!("{}{path}", self.base);
        let timeout = PROBE_TIMEOUT.min(Duration::from_millis(self.config.timeout_ms));
        self.transport
            .post(&url, b"{}", timeout, self.config.bearer_token.as_deref())
            .is_ok()
    }
}

impl Segmenter for RemoteBackend {
    fn segment(
        &self,
        image: &RgbImage,
        prompt: &SegPrompt,
    ) -> Result<Vec<SegmentationCandidate>, BackendError> {
        let dims = ImageDims::of(image)?;
        let req = SegmentRequest {
            image_b64: encode_image_b64(image),
            points: prompt.points.clone(),
            region: prompt.region,
            multimask: true,
        };
        let resp: SegmentResponse = self.call("/segment", &req)?;
        if resp.candidates.is_empty() {
            return Err(BackendError::NoMask);
        }
        resp.candidates
            .into_iter()
            .map(|c| {
                Self::check_dims(&c.rle, dims)?;
                if !(0.0..=1.0).contains(&c.score) {
                    return Err(BackendError::MalformedResponse(format!(
                        "score {} outside [0, 1]",
                        c.score
                    )));
                }
                Ok(SegmentationCandidate { mask: c.rle, score: c.score })
            })
            .collect()
    }

    fn segment_everything(&self, image: &RgbImage) -> Result<Vec<BitMask>, BackendError> {
        let dims = ImageDims::of(image)?;
        let req = ImageRequest { image_b64: encode_image_b64(image) };
        let resp: SegmentAllResponse = self.call("/segment_all", &req)?;
        resp.masks
            .into_iter()
            .map(|m| {
                Self::check_dims(&m.rle, dims)?;
                Ok(rle_decode(&m.rle)?)
            })
            .collect()
    }

    fn probe(&self) -> bool {
        self.probe_path(Self::path(BackendKind::Segmenter))
    }
}

impl Captioner for RemoteBackend {
    fn caption(&self, region: &RgbImage, prefix: &str) -> Result<String, BackendError> {
        let req = CaptionRequest {
            image_b64: encode_image_b64(region),
            prefix: prefix.to_string(),
        };
        let resp: TextResponse = self.call("/caption", &req)?;
        let text = resp.text.trim();
        if text.is_empty() {
            return Err(BackendError::EmptyCaption);
        }
        Ok(text.to_string())
    }

    fn probe(&self) -> bool {
        self.probe_path(Self::path(BackendKind::Captioner))
    }
}

impl Refiner for RemoteBackend {
    fn refine(&self, prompt: &PromptText) -> Result<String, BackendError> {
        let req = RefineRequest { prompt: prompt.as_str().to_string() };
        let resp: TextResponse = self.call("/refine", &req)?;
        check_refusal(&resp.text, &self.config.refusal_markers)
    }

    fn probe(&self) -> bool {
        self.probe_path(Self::path(BackendKind::Refiner))
    }
}

impl Vqa for RemoteBackend {
    fn vqa(&self, region: &RgbImage, question: &str) -> Result<String, BackendError> {
        if question.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty question".into()));
        }
        let req = VqaRequest {
            image_b64: encode_image_b64(region),
            question: question.to_string(),
        };
        let resp: VqaResponse = self.call("/vqa", &req)?;
        let answer = resp.answer.trim();
        if answer.is_empty() {
            return Err(BackendError::MalformedResponse("empty VQA answer".into()));
        }
        Ok(answer.to_string())
    }

    fn probe(&self) -> bool {
        self.probe_path(Self::path(BackendKind::Vqa))
    }
}

impl Ocr for RemoteBackend {
    fn ocr(&self, image: &RgbImage) -> Result<Vec<OcrLine>, BackendError> {
        let req = ImageRequest { image_b64: encode_image_b64(image) };
        let resp: OcrResponse = self.call("/ocr", &req)?;
        for line in &resp.lines {
            line.validate()?;
        }
        Ok(resp.lines)
    }

    fn probe(&self) -> bool {
        self.probe_path(Self::path(BackendKind::Ocr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{HttpResponse, TransportError};
    use std::sync::Mutex;

    struct Canned {
        status: u16,
        body: String,
        seen: Mutex<Vec<(String, String)>>,
    }

    impl Canned {
        fn new(status: u16, body: &str) -> Arc<Self> {
            Arc::new(Self { status, body: body.into(), seen: Mutex::new(Vec::new()) })
        }
    }

    impl Transport for Canned {
        fn post(
            &self,
            url: &str,
            body: &[u8],
            _t: Duration,
            _b: Option<&str>,
        ) -> Result<HttpResponse, TransportError> {
            self.seen
                .lock()
                .unwrap()
                .push((url.to_string(), String::from_utf8(body.to_vec()).unwrap()));
            Ok(HttpResponse { status: self.status, body: self.body.clone().into_bytes() })
        }
    }

    fn backend(kind: BackendKind, t: Arc<Canned>) -> RemoteBackend {
        RemoteBackend::with_transport(BackendConfig::remote(kind, "http://model/"), t)
            .unwrap()
            .with_sleeper(|_| {})
    }

    fn img() -> RgbImage {
        RgbImage::new(2, 2)
    }

    #[test]
    fn segment_request_shape() {
        let t = Canned::new(200, r#"{"candidates":[{"rle":{"w":2,"h":2,"counts":[0,4]},"score":0.7}]}"#);
        let b = backend(BackendKind::Segmenter, t.clone());
        let prompt = SegPrompt { points: vec![LabeledPoint::positive(1, 0)], region: None };
        let out = b.segment(&img(), &prompt).unwrap();
        assert_eq!(out[0].score, 0.7);
        let (url, body) = t.seen.lock().unwrap()[0].clone();
        assert_eq!(url, "http://model/segment");
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["points"], serde_json::json!([[1, 0, 1]]));
        assert_eq!(v["box"], serde_json::Value::Null);
        assert_eq!(v["multimask"], true);
        assert!(decode_image_b64(v["image_b64"].as_str().unwrap()).is_ok());
    }

    #[test]
    fn segment_rejects_wrong_dims_and_scores() {
        let t = Canned::new(200, r#"{"candidates":[{"rle":{"w":3,"h":2,"counts":[6]},"score":0.7}]}"#);
        let b = backend(BackendKind::Segmenter, t);
        let prompt = SegPrompt { points: vec![LabeledPoint::positive(1, 0)], region: None };
        assert!(matches!(b.segment(&img(), &prompt), Err(BackendError::MalformedResponse(_))));

        let t = Canned::new(200, r#"{"candidates":[{"rle":{"w":2,"h":2,"counts":[4]},"score":1.7}]}"#);
        let b = backend(BackendKind::Segmenter, t);
        assert!(matches!(b.segment(&img(), &prompt), Err(BackendError::MalformedResponse(_))));

        let t = Canned::new(200, r#"{"candidates":[]}"#);
        let b = backend(BackendKind::Segmenter, t);
        assert_eq!(b.segment(&img(), &prompt), Err(BackendError::NoMask));

        let t = Canned::new(200, r#"{"candidates":[{"rle":{"w":2,"h":2,"counts":[1,2]},"score":0.5}]}"#);
        let b = backend(BackendKind::Segmenter, t);
        assert!(matches!(b.segment(&img(), &prompt), Err(BackendError::MalformedResponse(_))));
    }

    #[test]
    fn segment_all_handles_empty_and_mismatch() {
        let b = backend(BackendKind::Segmenter, Canned::new(200, r#"{"masks":[]}"#));
        assert!(b.segment_everything(&img()).unwrap().is_empty());
        let b = backend(
            BackendKind::Segmenter,
            Canned::new(200, r#"{"masks":[{"rle":{"w":1,"h":1,"counts":[0,1]}}]}"#),
        );
        assert!(matches!(b.segment_everything(&img()), Err(BackendError::MalformedResponse(_))));
    }

    #[test]
    fn caption_and_refine() {
        let b = backend(BackendKind::Captioner, Canned::new(200, r#"{"text":"  "}"#));
        assert_eq!(b.caption(&img(), ""), Err(BackendError::EmptyCaption));
        let b = backend(BackendKind::Captioner, Canned::new(200, r#"{"text":" a cat "}"#));
        assert_eq!(b.caption(&img(), "").unwrap(), "a cat");

        let p = PromptText::new("Caption: x").unwrap();
        let b = backend(BackendKind::Refiner, Canned::new(200, r#"{"text":"I cannot help"}"#));
        assert!(matches!(b.refine(&p), Err(BackendError::Refusal(_))));
        let t = Canned::new(200, r#"{"text":"nice"}"#);
        let b = backend(BackendKind::Refiner, t.clone());
        assert_eq!(b.refine(&p).unwrap(), "nice");
        assert_eq!(t.seen.lock().unwrap()[0].1, r#"{"prompt":"Caption: x"}"#);
    }

    #[test]
    fn vqa_and_ocr() {
        let t = Canned::new(200, r#"{"answer":"red"}"#);
        let b = backend(BackendKind::Vqa, t.clone());
        assert!(matches!(b.vqa(&img(), ""), Err(BackendError::InvalidRequest(_))));
        assert!(t.seen.lock().unwrap().is_empty());
        assert_eq!(b.vqa(&img(), "color?").unwrap(), "red");

        let b = backend(
            BackendKind::Ocr,
            Canned::new(200, r#"{"lines":[{"text":"A","box":[0,0,1,1],"conf":1.2}]}"#),
        );
        assert!(matches!(b.ocr(&img()), Err(BackendError::MalformedResponse(_))));
    }

    #[test]
    fn schema_violation_is_malformed() {
        let b = backend(BackendKind::Captioner, Canned::new(200, r#"{"txt":"a"}"#));
        assert!(matches!(b.caption(&img(), ""), Err(BackendError::MalformedResponse(_))));
    }

    #[test]
    fn error_status_surfaces_message() {
        let b = backend(BackendKind::Captioner, Canned::new(422, r#"{"error":"bad image"}"#));
        assert_eq!(
            b.caption(&img(), ""),
            Err(BackendError::Rejected { status: 422, message: "bad image".into() })
        );
    }

    #[test]
    fn image_b64_round_trip() {
        let mut i = RgbImage::new(3, 2);
        i.put_pixel(2, 1, image::Rgb([1, 2, 3]));
        assert_eq!(decode_image_b64(&encode_image_b64(&i)).unwrap(), i);
    }
}
