//! The segment → caption → refine solver for one selected object.
//!
//! With visual chain-of-thought enabled the captioner runs twice: first on
//! the full image with the background painted white to name the object, then
//! on a margin crop of the original image, conditioned on that name.

use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backends::{image_digest, text_digest, BackendError, BackendKind, Backends, SegmentationCandidate};
use crate::error::{Error, Result};
use crate::geometry::{
    crop_image, crop_window, mask_bbox, normalize_control_with, rle_decode, rle_encode,
    whiten_background, BitMask, BoxRegion, GeometryError, ImageDims, NormalizeOptions, RleMask,
    VisualControl, DEFAULT_MARGIN_RATIO,
};
use crate::prompts::{
    build_cot_caption_prompt, build_cot_category_prompt, build_refiner_prompt, LanguageControls,
};

/// How the captioner sees the object when chain-of-thought is off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonCotStrategy {
    /// Margin crop of the original image.
    #[default]
    Crop,
    /// Full image with the background whitened.
    Whiten,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub margin_ratio: f64,
    pub normalize: NormalizeOptions,
    pub non_cot_strategy: NonCotStrategy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            margin_ratio: DEFAULT_MARGIN_RATIO,
            normalize: NormalizeOptions::default(),
            non_cot_strategy: NonCotStrategy::Crop,
        }
    }
}

fn yes() -> bool {
    true
}

/// Per-request inputs. The image itself is passed alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub control: VisualControl,
    #[serde(default)]
    pub controls: LanguageControls,
    #[serde(default = "yes")]
    pub use_cot: bool,
    #[serde(default = "yes")]
    pub refine: bool,
}

impl CaptionRequest {
    pub fn new(control: VisualControl) -> Self {
        Self {
            control,
            controls: LanguageControls::default(),
            use_cot: true,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepName {
    Segment,
    Whiten,
    Category,
    Crop,
    Caption,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub name: StepName,
    pub backend: Option<BackendKind>,
    /// First 16 hex digits of the SHA-256 of the step input.
    pub input_digest: String,
    pub output: String,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepTrace {
    pub steps: Vec<Step>,
}

impl StepTrace {
    fn record(
        &mut self,
        name: StepName,
        backend: Option<BackendKind>,
        input_digest: &str,
        output: impl Into<String>,
        started: Instant,
    ) {
        self.steps.push(Step {
            name,
            backend,
            input_digest: input_digest[..16].to_string(),
            output: output.into(),
            duration_ms: started.elapsed().as_millis() as u64,
        });
    }

    pub fn names(&self) -> Vec<StepName> {
        self.steps.iter().map(|s| s.name).collect()
    }

    /// Number of steps served by backend `kind`.
    pub fn calls_to(&self, kind: BackendKind) -> usize {
        self.steps.iter().filter(|s| s.backend == Some(kind)).count()
    }

    pub fn clear_durations(&mut self) {
        for s in &mut self.steps {
            s.duration_ms = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResult {
    /// Assigned by whoever persists the mask; absent in offline runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_id: Option<String>,
    pub mask: RleMask,
    pub bbox: BoxRegion,
    pub raw_caption: String,
    pub category: Option<String>,
    pub refined_caption: Option<String>,
    pub fallback_used: bool,
    pub trace: StepTrace,
}

impl CaptionResult {
    /// The caption to show: refined when available, raw otherwise.
    pub fn caption(&self) -> &str {
        self.refined_caption.as_deref().unwrap_or(&self.raw_caption)
    }

    pub fn without_durations(&self) -> Self {
        let mut out = self.clone();
        out.trace.clear_durations();
        out
    }
}

/// Picks the best segmentation: highest score, then larger area, then
/// earliest index.
pub fn choose_mask(candidates: &[SegmentationCandidate]) -> Result<&SegmentationCandidate> {
    let mut best: Option<(&SegmentationCandidate, u64)> = None;
    for c in candidates {
        let area = c.mask.area();
        best = match best {
            Some((b, b_area))
                if c.score < b.score || (c.score == b.score && area <= b_area) =>
            {
                Some((b, b_area))
            }
            _ => Some((c, area)),
        };
    }
    let (winner, area) = best.ok_or(Error::NoCandidates)?;
    if area == 0 {
        return Err(GeometryError::EmptyMask.into());
    }
    Ok(winner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verbosity {
    /// Caption text only.
    Low,
    /// Full wire record, trace included.
    High,
}

/// Stable rendering for CLI and API output.
pub fn render_result(result: &CaptionResult, verbosity: Verbosity) -> String {
    match verbosity {
        Verbosity::Low => result.caption().to_string(),
        Verbosity::High => serde_json::to_string_pretty(result).expect("result serializes"),
    }
}

fn short(digest: String) -> String {
    digest[..16].to_string()
}

/// Raw captioning output for one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCaption {
    pub caption: String,
    pub category: Option<String>,
}

#[derive(Clone)]
pub struct Pipeline {
    backends: Backends,
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(backends: Backends, config: PipelineConfig) -> Self {
        Self { backends, config }
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn caption_object(&self, image: &RgbImage, req: &CaptionRequest) -> Result<CaptionResult> {
        req.controls.validate()?;
        let dims = ImageDims::of(image)?;
        let mut trace = StepTrace::default();

        let started = Instant::now();
        let prompt = normalize_control_with(&req.control, dims, self.config.normalize)?;
        let candidates = self.backends.segmenter.segment(image, &prompt)?;
        let chosen = choose_mask(&candidates)?;
        let rle = chosen.mask.clone();
        if rle.dims() != dims {
            return Err(BackendError::MalformedResponse(format!(
                "mask is {} but image is {dims}",
                rle.dims()
            ))
            .into());
        }
        let mask = rle_decode(&rle)?;
        let prompt_json = serde_json::to_string(&prompt).expect("prompt serializes");
        trace.record(
            StepName::Segment,
            Some(BackendKind::Segmenter),
            &text_digest(&format!("{}:{prompt_json}", image_digest(image))),
            format!("rle:{}", short(text_digest(&rle.to_json()))),
            started,
        );

        let bbox = mask_bbox(&mask)?;
        let raw = self.caption_mask(image, &mask, req.use_cot, &mut trace)?;

        let (refined_caption, fallback_used) = if req.refine {
            self.refine(&raw.caption, &req.controls, &mut trace)?
        } else {
            (None, false)
        };

        Ok(CaptionResult {
            mask_id: None,
            mask: rle,
            bbox,
            raw_caption: raw.caption,
            category: raw.category,
            refined_caption,
            fallback_used,
            trace,
        })
    }

    /// Captions the region selected by `mask`, appending steps to `trace`.
    /// Exactly two captioner calls with chain-of-thought, one without.
    pub fn caption_mask(
        &self,
        image: &RgbImage,
        mask: &BitMask,
        use_cot: bool,
        trace: &mut StepTrace,
    ) -> Result<RawCaption> {
        let bbox = mask_bbox(mask)?;
        let dims = ImageDims::of(image)?;

        let mut category = None;
        if use_cot || self.config.non_cot_strategy == NonCotStrategy::Whiten {
            let started = Instant::now();
            let whitened = whiten_background(image, mask)?;
            let whitened_digest = image_digest(&whitened);
            trace.record(
                StepName::Whiten,
                None,
                &text_digest(&rle_encode(mask).to_json()),
                format!("image:{}", &whitened_digest[..16]),
                started,
            );

            if !use_cot {
                let started = Instant::now();
                let caption = self.backends.captioner.caption(&whitened, "")?;
                let caption = nonempty_caption(caption)?;
                trace.record(StepName::Caption, Some(BackendKind::Captioner), &whitened_digest, &caption, started);
                return Ok(RawCaption { caption, category: None });
            }

            let started = Instant::now();
            let name = self
                .backends
                .captioner
                .caption(&whitened, build_cot_category_prompt().as_str())?;
            let name = nonempty_caption(name)?;
            trace.record(StepName::Category, Some(BackendKind::Captioner), &whitened_digest, &name, started);
            category = Some(name);
        }

        let started = Instant::now();
        let window = crop_window(bbox, self.config.margin_ratio, dims);
        let crop = crop_image(image, window)?;
        let crop_digest = image_digest(&crop);
        trace.record(
            StepName::Crop,
            None,
            &image_digest(image),
            format!("window:[{},{},{},{}] image:{}", window.x0, window.y0, window.x1, window.y1, &crop_digest[..16]),
            started,
        );

        let prefix = match &category {
            Some(name) => build_cot_caption_prompt(name)?.as_str().to_string(),
            None => String::new(),
        };
        let started = Instant::now();
        let caption = self.backends.captioner.caption(&crop, &prefix)?;
        let caption = nonempty_caption(caption)?;
        trace.record(StepName::Caption, Some(BackendKind::Captioner), &crop_digest, &caption, started);

        Ok(RawCaption { caption, category })
    }

    /// Runs the refiner once. Refusals and outages fall back to the raw
    /// caption; any other refiner error propagates.
    fn refine(
        &self,
        raw: &str,
        controls: &LanguageControls,
        trace: &mut StepTrace,
    ) -> Result<(Option<String>, bool)> {
        let prompt = build_refiner_prompt(raw, controls)?;
        let started = Instant::now();
        let digest = text_digest(prompt.as_str());
        match self.backends.refiner.refine(&prompt) {
            Ok(text) => {
                trace.record(StepName::Refine, Some(BackendKind::Refiner), &digest, &text, started);
                Ok((Some(text), false))
            }
            Err(e @ (BackendError::Refusal(_) | BackendError::Unavailable(_))) => {
                trace.record(
                    StepName::Refine,
                    Some(BackendKind::Refiner),
                    &digest,
                    format!("fallback: {e}"),
                    started,
                );
                Ok((Some(raw.to_string()), true))
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn nonempty_caption(text: String) -> Result<String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(BackendError::EmptyCaption.into());
    }
    Ok(trimmed.to_string())
}
