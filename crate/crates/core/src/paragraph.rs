//! Caption everything: segment all objects, caption each region, merge with
//! scene text and summarize into one paragraph.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, OcrLine};
use crate::error::Result;
use crate::geometry::{
    filter_masks, mask_area, mask_bbox, rle_encode, BitMask, BoxRegion, FilterOptions, ImageDims,
    RleMask,
};
use crate::pipeline::{Pipeline, StepTrace};
use crate::prompts::{build_paragraph_prompt_styled, LanguageControls, PromptText};

pub const DEFAULT_MAX_REGIONS: usize = 20;
pub const DEFAULT_MIN_CONFIDENCE_OCR: f64 = 0.3;
pub const DEFAULT_PARALLELISM: usize = 4;

/// Separator for the fallback paragraph when the refiner is unavailable.
pub const FALLBACK_SEPARATOR: &str = "; ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseCaption {
    pub mask_id: String,
    pub bbox: BoxRegion,
    pub area: u64,
    pub caption: String,
    /// The region's mask; kept in memory for persistence, not sent on the wire.
    #[serde(skip)]
    pub mask: Option<RleMask>,
}

impl DenseCaption {
    pub fn new(mask_id: impl Into<String>, bbox: BoxRegion, area: u64, caption: impl Into<String>) -> Self {
        Self {
            mask_id: mask_id.into(),
            bbox,
            area,
            caption: caption.into(),
            mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParagraphOptions {
    pub max_regions: usize,
    pub use_cot: bool,
    pub min_confidence_ocr: f64,
    pub parallelism: usize,
    pub min_area_ratio: f64,
    pub iou_threshold: f64,
}

impl Default for ParagraphOptions {
    fn default() -> Self {
        let filter = FilterOptions::default();
        Self {
            max_regions: DEFAULT_MAX_REGIONS,
            use_cot: false,
            min_confidence_ocr: DEFAULT_MIN_CONFIDENCE_OCR,
            parallelism: DEFAULT_PARALLELISM,
            min_area_ratio: filter.min_area_ratio,
            iou_threshold: filter.iou_threshold,
        }
    }
}

impl ParagraphOptions {
    fn filter(&self) -> FilterOptions {
        FilterOptions {
            min_area_ratio: self.min_area_ratio,
            iou_threshold: self.iou_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphResult {
    pub dense: Vec<DenseCaption>,
    pub ocr: Vec<OcrLine>,
    pub prompt: PromptText,
    pub paragraph: String,
    pub fallback_used: bool,
}

#[derive(Clone)]
pub struct ParagraphEngine {
    pipeline: Pipeline,
}

impl ParagraphEngine {
    pub fn new(pipeline: Pipeline) -> Self {
        Self { pipeline }
    }

    pub fn dense_caption(&self, image: &RgbImage, opts: &ParagraphOptions) -> Result<Vec<DenseCaption>> {
        let masks = self.pipeline.backends().segmenter.segment_everything(image)?;
        self.dense_caption_from_masks(image, masks, opts)
    }

    /// Same as [`dense_caption`](Self::dense_caption) with segment-everything
    /// output supplied by the caller (e.g. from a cache).
    pub fn dense_caption_from_masks(
        &self,
        image: &RgbImage,
        masks: Vec<BitMask>,
        opts: &ParagraphOptions,
    ) -> Result<Vec<DenseCaption>> {
        let dims = ImageDims::of(image)?;
        if let Some(bad) = masks.iter().find(|m| m.dims() != dims) {
            return Err(BackendError::MalformedResponse(format!(
                "segment-everything mask is {} but image is {dims}",
                bad.dims()
            ))
            .into());
        }
        let mut kept = filter_masks(&masks, opts.filter())?;
        kept.truncate(opts.max_regions);
        if kept.is_empty() {
            kept.push(BitMask::full(dims));
        }

        let captions = self.caption_regions(image, &kept, opts)?;
        kept.iter()
            .zip(captions)
            .enumerate()
            .map(|(i, (mask, caption))| {
                Ok(DenseCaption {
                    mask_id: format!("r{}", i + 1),
                    bbox: mask_bbox(mask)?,
                    area: mask_area(mask),
                    caption,
                    mask: Some(rle_encode(mask)),
                })
            })
            .collect()
    }

    /// Captions every mask with at most `opts.parallelism` workers; output
    /// follows input order.
    fn caption_regions(&self, image: &RgbImage, masks: &[BitMask], opts: &ParagraphOptions) -> Result<Vec<String>> {
        let workers = opts.parallelism.clamp(1, masks.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<String>>>> = Mutex::new(vec![None; masks.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(mask) = masks.get(i) else { break };
                    let mut trace = StepTrace::default();
                    let out = self
                        .pipeline
                        .caption_mask(image, mask, opts.use_cot, &mut trace)
                        .map(|raw| raw.caption);
                    slots.lock().unwrap()[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|slot| slot.expect("every region is captioned"))
            .collect()
    }

    pub fn caption_everything(
        &self,
        image: &RgbImage,
        controls: &LanguageControls,
        opts: &ParagraphOptions,
    ) -> Result<ParagraphResult> {
        let masks = self.pipeline.backends().segmenter.segment_everything(image)?;
        self.caption_everything_from_masks(image, masks, controls, opts)
    }

    pub fn caption_everything_from_masks(
        &self,
        image: &RgbImage,
        masks: Vec<BitMask>,
        controls: &LanguageControls,
        opts: &ParagraphOptions,
    ) -> Result<ParagraphResult> {
        controls.validate()?;
        let dense = self.dense_caption_from_masks(image, masks, opts)?;
        let ocr: Vec<OcrLine> = self
            .pipeline
            .backends()
            .ocr
            .ocr(image)?
            .into_iter()
            .filter(|l| l.confidence >= opts.min_confidence_ocr)
            .collect();
        let prompt = build_paragraph_prompt_styled(&dense, &ocr, controls)?;
        let (paragraph, fallback_used) = match self.pipeline.backends().refiner.refine(&prompt) {
            Ok(text) => (text, false),
            Err(BackendError::Refusal(_) | BackendError::Unavailable(_)) => {
                let joined: Vec<&str> = dense.iter().map(|d| d.caption.as_str()).collect();
                (joined.join(FALLBACK_SEPARATOR), true)
            }
            Err(e) => return Err(e.into()),
        };
        Ok(ParagraphResult { dense, ocr, prompt, paragraph, fallback_used })
    }
}
