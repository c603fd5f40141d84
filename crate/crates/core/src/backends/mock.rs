//! Deterministic in-process backends.
//!
//! Every mock is a pure function of its inputs and fixture files, so whole
//! pipelines can be pinned byte-for-byte in tests.

use std::path::Path;
use std::sync::Mutex;

use image::RgbImage;

use super::{
    check_refusal, image_digest, BackendError, Captioner, OcrLine, Ocr, Refiner, Segmenter,
    SegmentationCandidate, Vqa, DEFAULT_REFUSAL_MARKERS,
};
use crate::geometry::{rle_encode, BitMask, BoxRegion, ImageDims, SegPrompt};
use crate::prompts::PromptText;

pub const MOCK_POINT_SCORE: f64 = 0.9;
pub const MOCK_BOX_SCORE: f64 = 0.95;

/// Point prompt: filled square of side `floor(min(w, h) / 4)` (at least 1)
/// centred on the first positive point. Box prompt: the box itself. A box
/// wins when both are present. `segment_everything` returns the 2x2 quadrant
/// partition, skipping empty quadrants of 1-pixel-wide images.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSegmenter;

impl MockSegmenter {
    pub fn point_square(dims: ImageDims, cx: i32, cy: i32) -> BoxRegion {
        let side = (dims.width.min(dims.height) / 4).max(1) as i32;
        let x0 = cx - side / 2;
        let y0 = cy - side / 2;
        BoxRegion::new(x0, y0, x0 + side - 1, y0 + side - 1)
    }
}

impl Segmenter for MockSegmenter {
    fn segment(
        &self,
        image: &RgbImage,
        prompt: &SegPrompt,
    ) -> Result<Vec<SegmentationCandidate>, BackendError> {
        let dims = ImageDims::of(image)?;
        let (region, score) = match (prompt.region, prompt.first_positive()) {
            (Some(b), _) => (b, MOCK_BOX_SCORE),
            (None, Some(p)) => (Self::point_square(dims, p.x, p.y), MOCK_POINT_SCORE),
            (None, None) => return Err(BackendError::NoMask),
        };
        let mask = BitMask::from_box(dims, region);
        Ok(vec![SegmentationCandidate { mask: rle_encode(&mask), score }])
    }

    fn segment_everything(&self, image: &RgbImage) -> Result<Vec<BitMask>, BackendError> {
        let dims = ImageDims::of(image)?;
        let (w, h) = (dims.width as i32, dims.height as i32);
        let (mx, my) = (w / 2, h / 2);
        let quadrants = [
            (0, 0, mx - 1, my - 1),
            (mx, 0, w - 1, my - 1),
            (0, my, mx - 1, h - 1),
            (mx, my, w - 1, h - 1),
        ];
        Ok(quadrants
            .into_iter()
            .filter(|&(x0, y0, x1, y1)| x0 <= x1 && y0 <= y1)
            .map(|(x0, y0, x1, y1)| BitMask::from_box(dims, BoxRegion::new(x0, y0, x1, y1)))
            .collect())
    }
}

/// Returns `mock-caption(h=<first 8 hex of the region digest>|p=<prefix>)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockCaptioner;

impl Captioner for MockCaptioner {
    fn caption(&self, region: &RgbImage, prefix: &str) -> Result<String, BackendError> {
        let digest = image_digest(region);
        Ok(format!("mock-caption(h={}|p={prefix})", &digest[..8]))
    }
}

/// Echoes the prompt's last `Caption: ` line (or, failing that, its last
/// non-empty line) with ` [refined]` appended.
#[derive(Debug, Clone)]
pub struct MockRefiner {
    refusal_markers: Vec<String>,
}

impl Default for MockRefiner {
    fn default() -> Self {
        Self::new(DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect())
    }
}

impl MockRefiner {
    pub fn new(refusal_markers: Vec<String>) -> Self {
        Self { refusal_markers }
    }
}

impl Refiner for MockRefiner {
    fn refine(&self, prompt: &PromptText) -> Result<String, BackendError> {
        let text = prompt.as_str();
        let body = text
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Caption: "))
            .or_else(|| text.lines().rev().find(|l| !l.trim().is_empty()))
            .unwrap_or(text);
        check_refusal(&format!("{body} [refined]"), &self.refusal_markers)
    }
}

/// Replays a fixed list of responses in order, one per call.
///
/// Fixture files hold one response per line; `\n` inside a line encodes a
/// newline and `\\` a backslash. Blank lines are skipped. Once the script is
/// exhausted every call fails with `Unavailable`.
#[derive(Debug)]
pub struct ScriptedRefiner {
    responses: Vec<String>,
    cursor: Mutex<usize>,
    refusal_markers: Vec<String>,
}

impl ScriptedRefiner {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            cursor: Mutex::new(0),
            refusal_markers: DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_refusal_markers(mut self, markers: Vec<String>) -> Self {
        self.refusal_markers = markers;
        self
    }

    pub fn parse_script(text: &str) -> Self {
        Self::new(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(unescape_line),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Config(format!("cannot read refiner script {}: {e}", path.display()))
        })?;
        Ok(Self::parse_script(&text))
    }

    /// Number of responses consumed so far.
    pub fn consumed(&self) -> usize {
        *self.cursor.lock().unwrap()
    }
}

fn unescape_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

impl Refiner for ScriptedRefiner {
    fn refine(&self, _prompt: &PromptText) -> Result<String, BackendError> {
        let mut cursor = self.cursor.lock().unwrap();
        let Some(response) = self.responses.get(*cursor) else {
            return Err(BackendError::Unavailable("refiner script exhausted".into()));
        };
        *cursor += 1;
        check_refusal(response, &self.refusal_markers)
    }
}

/// Returns `mock-vqa(<question>)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockVqa;

impl Vqa for MockVqa {
    fn vqa(&self, _region: &RgbImage, question: &str) -> Result<String, BackendError> {
        if question.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty question".into()));
        }
        Ok(format!("mock-vqa({question})"))
    }
}

/// Returns fixture lines verbatim, or nothing.
///
/// Fixture format: one record per line, `text<TAB>x0,y0,x1,y1<TAB>conf`.
#[derive(Debug, Clone, Default)]
pub struct MockOcr {
    lines: Vec<OcrLine>,
}

impl MockOcr {
    pub fn new(lines: Vec<OcrLine>) -> Result<Self, BackendError> {
        for line in &lines {
            line.validate()?;
        }
        Ok(Self { lines })
    }

    pub fn parse_fixture(text: &str) -> Result<Self, BackendError> {
        let mut lines = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| {
                BackendError::Config(format!("OCR fixture line {}: {what}", n + 1))
            };
            let mut fields = raw.split('\t');
            let (Some(text), Some(coords), Some(conf), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected three tab-separated fields"));
            };
            let coords: Vec<i32> = coords
                .split(',')
                .map(|c| c.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("box must be four integers"))?;
            let [x0, y0, x1, y1] = coords[..] else {
                return Err(bad("box must be four integers"));
            };
            let confidence: f64 = conf.trim().parse().map_err(|_| bad("bad confidence"))?;
            lines.push(OcrLine {
                text: text.to_string(),
                region: BoxRegion::new(x0, y0, x1, y1),
                confidence,
            });
        }
        Self::new(lines)
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Config(format!("cannot read OCR fixture {}: {e}", path.display()))
        })?;
        Self::parse_fixture(&text)
    }
}

impl Ocr for MockOcr {
    fn ocr(&self, _image: &RgbImage) -> Result<Vec<OcrLine>, BackendError> {
        Ok(self.lines.clone())
    }
}
