//! Visual-control normalization and binary mask / raster post-processing.
//!
//! Coordinates are integer pixels; boxes are inclusive on both ends. Masks are
//! stored row-major, and their run-length form always starts with a zero-run.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of points a trajectory is resampled to before segmentation.
pub const DEFAULT_TRAJECTORY_POINTS: usize = 8;
/// Per-side crop margin, as a fraction of the box extent on that axis.
pub const DEFAULT_MARGIN_RATIO: f64 = 0.15;
/// Masks smaller than this fraction of the image are dropped by [`filter_masks`].
pub const DEFAULT_MIN_AREA_RATIO: f64 = 0.0005;
/// Masks overlapping an already kept mask at or above this IoU are dropped.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    InvalidDims { width: u32, height: u32 },
    #[error("visual control selects nothing")]
    EmptyControl,
    #[error("mask has no set pixel")]
    EmptyMask,
    #[error("dimension mismatch: {0} vs {1}")]
    DimsMismatch(ImageDims, ImageDims),
    #[error("invalid run-length mask: {0}")]
    InvalidRle(String),
    #[error("window {0:?} exceeds image {1}")]
    OutOfBounds(BoxRegion, ImageDims),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims")]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawDims {
    width: u32,
    height: u32,
}

impl TryFrom<RawDims> for ImageDims {
    type Error = GeometryError;

    fn try_from(raw: RawDims) -> Result<Self, Self::Error> {
        ImageDims::new(raw.width, raw.height)
    }
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn of(image: &RgbImage) -> Result<Self, GeometryError> {
        Self::new(image.width(), image.height())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// The whole image as an inclusive box.
    pub fn full_box(&self) -> BoxRegion {
        BoxRegion::new(0, 0, self.width as i32 - 1, self.height as i32 - 1)
    }

    fn clamp_x(&self, x: i32) -> i32 {
        x.clamp(0, self.width as i32 - 1)
    }

    fn clamp_y(&self, y: i32) -> i32 {
        y.clamp(0, self.height as i32 - 1)
    }
}

impl std::fmt::Display for ImageDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledPoint {
    pub x: i32,
    pub y: i32,
    pub label: PointLabel,
}

impl LabeledPoint {
    pub fn positive(x: i32, y: i32) -> Self {
        Self { x, y, label: PointLabel::Positive }
    }

    pub fn negative(x: i32, y: i32) -> Self {
        Self { x, y, label: PointLabel::Negative }
    }
}

/// Wire form `[x, y, label]` with label 1 for positive and 0 for negative.
impl Serialize for LabeledPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let label = u8::from(self.label == PointLabel::Positive);
        (self.x, self.y, label).serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabeledPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (x, y, label) = <(i32, i32, u8)>::deserialize(d)?;
        let label = match label {
            1 => PointLabel::Positive,
            0 => PointLabel::Negative,
            other => {
                return Err(serde::de::Error::custom(format!(
                    "point label must be 0 or 1, got {other}"
                )))
            }
        };
        Ok(Self { x, y, label })
    }
}

/// Inclusive pixel box. Wire form is `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 4]", into = "[i32; 4]")]
pub struct BoxRegion {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl From<[i32; 4]> for BoxRegion {
    fn from([x0, y0, x1, y1]: [i32; 4]) -> Self {
        Self { x0, y0, x1, y1 }
    }
}

impl From<BoxRegion> for [i32; 4] {
    fn from(b: BoxRegion) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BoxRegion {
    pub const fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Swaps corners so that `x0 <= x1` and `y0 <= y1`.
    pub fn ordered(self) -> Self {
        Self {
            x0: self.x0.min(self.x1),
            y0: self.y0.min(self.y1),
            x1: self.x0.max(self.x1),
            y1: self.y0.max(self.y1),
        }
    }

    pub fn clamped(self, dims: ImageDims) -> Self {
        Self {
            x0: dims.clamp_x(self.x0),
            y0: dims.clamp_y(self.y0),
            x1: dims.clamp_x(self.x1),
            y1: dims.clamp_y(self.y1),
        }
    }

    pub fn width(&self) -> u32 {
        (self.x1 - self.x0 + 1) as u32
    }

    pub fn height(&self) -> u32 {
        (self.y1 - self.y0 + 1) as u32
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn is_within(&self, dims: ImageDims) -> bool {
        self.x0 >= 0
            && self.y0 >= 0
            && self.x0 <= self.x1
            && self.y0 <= self.y1
            && self.x1 < dims.width as i32
            && self.y1 < dims.height as i32
    }
}

/// Ordered polyline drawn by the user. Must hold at least one point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub points: Vec<(i32, i32)>,
}

impl Trajectory {
    pub fn new(points: Vec<(i32, i32)>) -> Self {
        Self { points }
    }
}

/// The user's spatial selection gesture.
///
/// Wire form is an object with exactly one of the keys `points`, `box` or
/// `trajectory`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum VisualControl {
    Points(Vec<LabeledPoint>),
    Box(BoxRegion),
    Trajectory(Trajectory),
}

/// Prompt handed to the segmenter after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegPrompt {
    pub points: Vec<LabeledPoint>,
    #[serde(rename = "box")]
    pub region: Option<BoxRegion>,
}

impl SegPrompt {
    /// First positive point, if any.
    pub fn first_positive(&self) -> Option<LabeledPoint> {
        self.points
            .iter()
            .copied()
            .find(|p| p.label == PointLabel::Positive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeOptions {
    pub trajectory_points: usize,
    /// Forward the trajectory's bounding hull as a box prompt alongside its points.
    pub forward_hull_box: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            trajectory_points: DEFAULT_TRAJECTORY_POINTS,
            forward_hull_box: true,
        }
    }
}

pub fn normalize_control(
    control: &VisualControl,
    dims: ImageDims,
) -> Result<SegPrompt, GeometryError> {
    normalize_control_with(control, dims, NormalizeOptions::default())
}

pub fn normalize_control_with(
    control: &VisualControl,
    dims: ImageDims,
    opts: NormalizeOptions,
) -> Result<SegPrompt, GeometryError> {
    match control {
        VisualControl::Points(points) => {
            if !points.iter().any(|p| p.label == PointLabel::Positive) {
                return Err(GeometryError::EmptyControl);
            }
            let points = points
                .iter()
                .map(|p| LabeledPoint {
                    x: dims.clamp_x(p.x),
                    y: dims.clamp_y(p.y),
                    label: p.label,
                })
                .collect();
            Ok(SegPrompt { points, region: None })
        }
        VisualControl::Box(region) => Ok(SegPrompt {
            points: Vec::new(),
            region: Some(region.ordered().clamped(dims)),
        }),
        VisualControl::Trajectory(traj) => {
            if traj.points.is_empty() {
                return Err(GeometryError::EmptyControl);
            }
            let clamped = Trajectory::new(
                traj.points
                    .iter()
                    .map(|&(x, y)| (dims.clamp_x(x), dims.clamp_y(y)))
                    .collect(),
            );
            let k = opts.trajectory_points.max(1);
            let points = resample_trajectory(&clamped, k)
                .into_iter()
                .map(|(x, y)| LabeledPoint::positive(x, y))
                .collect();
            let region = opts.forward_hull_box.then(|| hull(&clamped.points));
            Ok(SegPrompt { points, region })
        }
    }
}

fn hull(points: &[(i32, i32)]) -> BoxRegion {
    let (x, y) = points[0];
    points.iter().fold(BoxRegion::new(x, y, x, y), |b, &(x, y)| {
        BoxRegion::new(b.x0.min(x), b.y0.min(y), b.x1.max(x), b.y1.max(y))
    })
}

/// Resamples a polyline to `k` points spaced uniformly by arc length.
///
/// For `k >= 2` the first and last samples are the polyline endpoints. A
/// single sample sits at the arc-length midpoint. Trajectories with a single
/// vertex, or with zero total length, yield their first vertex once.
///
/// Panics if the trajectory is empty or `k` is zero.
pub fn resample_trajectory(traj: &Trajectory, k: usize) -> Vec<(i32, i32)> {
    assert!(!traj.points.is_empty(), "trajectory must not be empty");
    assert!(k >= 1, "sample count must be positive");

    let pts: Vec<(f64, f64)> = traj
        .points
        .iter()
        .map(|&(x, y)| (f64::from(x), f64::from(y)))
        .collect();
    let seg_lens: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .collect();
    let total: f64 = seg_lens.iter().sum();
    if pts.len() == 1 || total == 0.0 {
        return vec![traj.points[0]];
    }

    let targets: Vec<f64> = if k == 1 {
        vec![total / 2.0]
    } else {
        (0..k).map(|i| total * i as f64 / (k - 1) as f64).collect()
    };

    let mut out = Vec::with_capacity(k);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if k >= 2 && i == k - 1 {
            // Land exactly on the final vertex regardless of float drift.
            let last = pts[pts.len() - 1];
            out.push((round_px(last.0), round_px(last.1)));
            continue;
        }
        while seg + 1 < seg_lens.len() && seg_start + seg_lens[seg] < t {
            seg_start += seg_lens[seg];
            seg += 1;
        }
        let len = seg_lens[seg];
        let frac = if len > 0.0 {
            ((t - seg_start) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push((
            round_px(a.0 + (b.0 - a.0) * frac),
            round_px(a.1 + (b.1 - a.1) * frac),
        ));
    }
    out
}

/// Rounds half away from zero.
pub fn round_px(v: f64) -> i32 {
    v.round() as i32
}

/// Dense row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    dims: ImageDims,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(dims: ImageDims, bits: Vec<bool>) -> Result<Self, GeometryError> {
        if bits.len() != dims.pixel_count() {
            return Err(GeometryError::InvalidRle(format!(
                "expected {} bits for {dims}, got {}",
                dims.pixel_count(),
                bits.len()
            )));
        }
        Ok(Self { dims, bits })
    }

    pub fn empty(dims: ImageDims) -> Self {
        Self { dims, bits: vec![false; dims.pixel_count()] }
    }

    pub fn full(dims: ImageDims) -> Self {
        Self { dims, bits: vec![true; dims.pixel_count()] }
    }

    /// Mask with every pixel of `region` (clipped to the image) set.
    pub fn from_box(dims: ImageDims, region: BoxRegion) -> Self {
        let mut mask = Self::empty(dims);
        let r = region.ordered();
        let x0 = r.x0.max(0);
        let y0 = r.y0.max(0);
        let x1 = r.x1.min(dims.width as i32 - 1);
        let y1 = r.y1.min(dims.height as i32 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                mask.set(x as u32, y as u32, true);
            }
        }
        mask
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.dims.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.dims.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }
}

/// Run-length mask: alternating zero/one runs over the row-major scan,
/// always starting with a (possibly empty) zero-run.
///
/// Textual form: `{"w":W,"h":H,"counts":[c0,c1,...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleWire", into = "RleWire")]
pub struct RleMask {
    dims: ImageDims,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct RleWire {
    w: u32,
    h: u32,
    counts: Vec<u64>,
}

impl TryFrom<RleWire> for RleMask {
    type Error = GeometryError;

    fn try_from(wire: RleWire) -> Result<Self, Self::Error> {
        let dims = ImageDims::new(wire.w, wire.h)
            .map_err(|e| GeometryError::InvalidRle(e.to_string()))?;
        RleMask::new(dims, wire.counts)
    }
}

impl From<RleMask> for RleWire {
    fn from(rle: RleMask) -> Self {
        RleWire {
            w: rle.dims.width,
            h: rle.dims.height,
            counts: rle.counts,
        }
    }
}

impl RleMask {
    /// Validates the run-length invariants.
    pub fn new(dims: ImageDims, counts: Vec<u64>) -> Result<Self, GeometryError> {
        if counts.is_empty() {
            return Err(GeometryError::InvalidRle("no runs".into()));
        }
        if let Some(i) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(GeometryError::InvalidRle(format!(
                "zero-length run at index {}",
                i + 1
            )));
        }
        let total: u64 = counts.iter().sum();
        if total != dims.pixel_count() as u64 {
            return Err(GeometryError::InvalidRle(format!(
                "runs cover {total} pixels, {dims} needs {}",
                dims.pixel_count()
            )));
        }
        Ok(Self { dims, counts })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("rle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        serde_json::from_str(text).map_err(|e| GeometryError::InvalidRle(e.to_string()))
    }
}

pub fn mask_bbox(mask: &BitMask) -> Result<BoxRegion, GeometryError> {
    let w = mask.dims.width as usize;
    let mut found: Option<BoxRegion> = None;
    for (y, row) in mask.bits.chunks(w).enumerate() {
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).unwrap_or(first);
        let (y, first, last) = (y as i32, first as i32, last as i32);
        found = Some(match found {
            None => BoxRegion::new(first, y, last, y),
            Some(b) => BoxRegion::new(b.x0.min(first), b.y0, b.x1.max(last), y),
        });
    }
    found.ok_or(GeometryError::EmptyMask)
}

pub fn mask_area(mask: &BitMask) -> u64 {
    mask.bits.iter().filter(|&&b| b).count() as u64
}

/// Intersection over union; 0 when both masks are empty.
pub fn mask_iou(a: &BitMask, b: &BitMask) -> Result<f64, GeometryError> {
    if a.dims != b.dims {
        return Err(GeometryError::DimsMismatch(a.dims, b.dims));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &q) in a.bits.iter().zip(&b.bits) {
        inter += u64::from(p && q);
        union += u64::from(p || q);
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

pub fn rle_encode(mask: &BitMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &bit in &mask.bits {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    counts.push(run);
    RleMask { dims: mask.dims, counts }
}

pub fn rle_decode(rle: &RleMask) -> Result<BitMask, GeometryError> {
    // Re-validate: callers may hold a value built before a dims change.
    let rle = RleMask::new(rle.dims, rle.counts.clone())?;
    let mut bits = Vec::with_capacity(rle.dims.pixel_count());
    let mut value = false;
    for &c in &rle.counts {
        bits.extend(std::iter::repeat_n(value, c as usize));
        value = !value;
    }
    BitMask::new(rle.dims, bits)
}

/// Expands `region` outward by `round(ratio * extent)` per side on each axis,
/// where the extent is `x1 - x0` (or `y1 - y0`), then clamps to the image.
pub fn crop_window(region: BoxRegion, margin_ratio: f64, dims: ImageDims) -> BoxRegion {
    let r = region.ordered();
    let mx = round_px(margin_ratio * f64::from(r.x1 - r.x0));
    let my = round_px(margin_ratio * f64::from(r.y1 - r.y0));
    BoxRegion::new(r.x0 - mx, r.y0 - my, r.x1 + mx, r.y1 + my).clamped(dims)
}

pub fn crop_image(image: &RgbImage, window: BoxRegion) -> Result<RgbImage, GeometryError> {
    let dims = ImageDims::of(image)?;
    if !window.is_within(dims) {
        return Err(GeometryError::OutOfBounds(window, dims));
    }
    Ok(image::imageops::crop_imm(
        image,
        window.x0 as u32,
        window.y0 as u32,
        window.width(),
        window.height(),
    )
    .to_image())
}

/// Paints every pixel outside the mask white.
pub fn whiten_background(image: &RgbImage, mask: &BitMask) -> Result<RgbImage, GeometryError> {
    let dims = ImageDims::of(image)?;
    if dims != mask.dims {
        return Err(GeometryError::DimsMismatch(dims, mask.dims));
    }
    let mut out = image.clone();
    for (px, &keep) in out.pixels_mut().zip(&mask.bits) {
        if !keep {
            *px = Rgb([255, 255, 255]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub min_area_ratio: f64,
    pub iou_threshold: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            min_area_ratio: DEFAULT_MIN_AREA_RATIO,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

/// Greedy area-ordered dedup of segment-everything candidates.
///
/// Candidates are visited by area descending (stable on input order) and kept
/// when large enough and overlapping every kept mask below the IoU threshold.
pub fn filter_masks(
    candidates: &[BitMask],
    opts: FilterOptions,
) -> Result<Vec<BitMask>, GeometryError> {
    let Some(first) = candidates.first() else {
        return Ok(Vec::new());
    };
    let dims = first.dims;
    if let Some(bad) = candidates.iter().find(|m| m.dims != dims) {
        return Err(GeometryError::DimsMismatch(dims, bad.dims));
    }
    let floor = opts.min_area_ratio * dims.pixel_count() as f64;

    let mut order: Vec<(usize, u64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, m)| (i, mask_area(m)))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1));

    let mut kept: Vec<&BitMask> = Vec::new();
    for (i, area) in order {
        if (area as f64) < floor {
            continue;
        }
        let candidate = &candidates[i];
        let mut distinct = true;
        for k in &kept {
            if mask_iou(candidate, k)? >= opts.iou_threshold {
                distinct = false;
                break;
            }
        }
        if distinct {
            kept.push(candidate);
        }
    }
    Ok(kept.into_iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    fn mask_from_rows(rows: &[&[u8]]) -> BitMask {
        let d = dims(rows[0].len() as u32, rows.len() as u32);
        let bits = rows.iter().flat_map(|r| r.iter().map(|&b| b == 1)).collect();
        BitMask::new(d, bits).unwrap()
    }

    fn rect(d: ImageDims, b: BoxRegion) -> BitMask {
        BitMask::from_box(d, b)
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(ImageDims::new(0, 4).is_err());
        assert!(ImageDims::new(4, 0).is_err());
    }

    #[test]
    fn point_control_passes_through() {
        let p = normalize_control(
            &VisualControl::Points(vec![LabeledPoint::positive(5, 5)]),
            dims(10, 10),
        )
        .unwrap();
        assert_eq!(p.points, vec![LabeledPoint::positive(5, 5)]);
        assert_eq!(p.region, None);
    }

    #[test]
    fn points_are_clamped() {
        let p = normalize_control(
            &VisualControl::Points(vec![
                LabeledPoint::positive(-3, 40),
                LabeledPoint::negative(12, -1),
            ]),
            dims(10, 10),
        )
        .unwrap();
        assert_eq!(
            p.points,
            vec![LabeledPoint::positive(0, 9), LabeledPoint::negative(9, 0)]
        );
    }

    #[test]
    fn box_control_is_ordered() {
        let p = normalize_control(
            &VisualControl::Box(BoxRegion::new(8, 9, 2, 3)),
            dims(20, 20),
        )
        .unwrap();
        assert_eq!(p.region, Some(BoxRegion::new(2, 3, 8, 9)));
        assert!(p.points.is_empty());
    }

    #[test]
    fn zero_area_box_is_valid() {
        let p = normalize_control(
            &VisualControl::Box(BoxRegion::new(4, 4, 4, 4)),
            dims(20, 20),
        )
        .unwrap();
        assert_eq!(p.region.unwrap().width(), 1);
    }

    #[test]
    fn trajectory_resampled_with_hull() {
        let opts = NormalizeOptions { trajectory_points: 3, forward_hull_box: true };
        let p = normalize_control_with(
            &VisualControl::Trajectory(Trajectory::new(vec![(0, 0), (10, 0)])),
            dims(20, 20),
            opts,
        )
        .unwrap();
        assert_eq!(
            p.points,
            vec![
                LabeledPoint::positive(0, 0),
                LabeledPoint::positive(5, 0),
                LabeledPoint::positive(10, 0)
            ]
        );
        assert_eq!(p.region, Some(BoxRegion::new(0, 0, 10, 0)));
    }

    #[test]
    fn trajectory_hull_can_be_suppressed() {
        let opts = NormalizeOptions { trajectory_points: 3, forward_hull_box: false };
        let p = normalize_control_with(
            &VisualControl::Trajectory(Trajectory::new(vec![(0, 0), (10, 0)])),
            dims(20, 20),
            opts,
        )
        .unwrap();
        assert_eq!(p.region, None);
        assert_eq!(p.points.len(), 3);
    }

    #[test]
    fn empty_controls_rejected() {
        let d = dims(10, 10);
        assert_eq!(
            normalize_control(&VisualControl::Points(vec![]), d),
            Err(GeometryError::EmptyControl)
        );
        assert_eq!(
            normalize_control(
                &VisualControl::Points(vec![LabeledPoint::negative(1, 1)]),
                d
            ),
            Err(GeometryError::EmptyControl)
        );
        assert_eq!(
            normalize_control(&VisualControl::Trajectory(Trajectory::new(vec![])), d),
            Err(GeometryError::EmptyControl)
        );
    }

    #[test]
    fn single_point_trajectory() {
        let t = Trajectory::new(vec![(2, 3)]);
        assert_eq!(resample_trajectory(&t, 5), vec![(2, 3)]);
    }

    #[test]
    fn resample_straight_and_bent() {
        let t = Trajectory::new(vec![(0, 0), (10, 0)]);
        assert_eq!(resample_trajectory(&t, 3), vec![(0, 0), (5, 0), (10, 0)]);
        let t = Trajectory::new(vec![(0, 0), (4, 0), (4, 4)]);
        assert_eq!(resample_trajectory(&t, 3), vec![(0, 0), (4, 0), (4, 4)]);
    }

    #[test]
    fn resample_single_sample_is_midpoint() {
        let t = Trajectory::new(vec![(0, 0), (10, 0)]);
        assert_eq!(resample_trajectory(&t, 1), vec![(5, 0)]);
    }

    #[test]
    fn resample_rounds_half_away_from_zero() {
        // Samples at arc length 0, 2.5, 5 → x = 2.5 rounds up to 3.
        let t = Trajectory::new(vec![(0, 0), (5, 0)]);
        assert_eq!(resample_trajectory(&t, 3), vec![(0, 0), (3, 0), (5, 0)]);
    }

    #[test]
    fn bbox_examples() {
        assert_eq!(
            mask_bbox(&BitMask::full(dims(4, 4))).unwrap(),
            BoxRegion::new(0, 0, 3, 3)
        );
        let mut m = BitMask::empty(dims(8, 8));
        m.set(3, 5, true);
        assert_eq!(mask_bbox(&m).unwrap(), BoxRegion::new(3, 5, 3, 5));
        let mut m = BitMask::empty(dims(8, 8));
        m.set(1, 2, true);
        m.set(4, 7, true);
        assert_eq!(mask_bbox(&m).unwrap(), BoxRegion::new(1, 2, 4, 7));
        assert_eq!(
            mask_bbox(&BitMask::empty(dims(3, 3))),
            Err(GeometryError::EmptyMask)
        );
    }

    #[test]
    fn area_examples() {
        assert_eq!(mask_area(&BitMask::empty(dims(3, 3))), 0);
        assert_eq!(mask_area(&BitMask::full(dims(3, 3))), 9);
        assert_eq!(mask_area(&mask_from_rows(&[&[1, 0], &[0, 1]])), 2);
    }

    #[test]
    fn iou_examples() {
        let d = dims(4, 4);
        let a = rect(d, BoxRegion::new(0, 0, 1, 1));
        let b = rect(d, BoxRegion::new(1, 0, 2, 1));
        let c = rect(d, BoxRegion::new(3, 3, 3, 3));
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &c).unwrap(), 0.0);
        assert!((mask_iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        let e = BitMask::empty(d);
        assert_eq!(mask_iou(&e, &e).unwrap(), 0.0);
        assert!(matches!(
            mask_iou(&a, &BitMask::empty(dims(3, 4))),
            Err(GeometryError::DimsMismatch(..))
        ));
    }

    #[test]
    fn rle_examples() {
        let d = dims(2, 2);
        assert_eq!(rle_encode(&BitMask::empty(d)).counts(), &[4]);
        assert_eq!(rle_encode(&BitMask::full(d)).counts(), &[0, 4]);
        let m = mask_from_rows(&[&[1, 0], &[0, 1]]);
        let rle = rle_encode(&m);
        assert_eq!(rle.counts(), &[0, 1, 2, 1]);
        assert_eq!(rle_decode(&rle).unwrap(), m);
        assert_eq!(rle.area(), 2);
    }

    #[test]
    fn rle_textual_form() {
        let m = mask_from_rows(&[&[1, 0], &[0, 1]]);
        let text = rle_encode(&m).to_json();
        assert_eq!(text, r#"{"w":2,"h":2,"counts":[0,1,2,1]}"#);
        assert_eq!(RleMask::from_json(&text).unwrap(), rle_encode(&m));
    }

    #[test]
    fn invalid_rle_rejected() {
        let d = dims(2, 2);
        assert!(matches!(
            RleMask::new(d, vec![1, 2]),
            Err(GeometryError::InvalidRle(_))
        ));
        assert!(matches!(
            RleMask::new(d, vec![2, 0, 2]),
            Err(GeometryError::InvalidRle(_))
        ));
        assert!(RleMask::from_json(r#"{"w":2,"h":2,"counts":[5]}"#).is_err());
        assert!(RleMask::from_json(r#"{"w":0,"h":2,"counts":[0]}"#).is_err());
    }

    #[test]
    fn crop_window_examples() {
        let d = dims(100, 100);
        assert_eq!(
            crop_window(BoxRegion::new(10, 10, 20, 20), 0.5, d),
            BoxRegion::new(5, 5, 25, 25)
        );
        assert_eq!(
            crop_window(BoxRegion::new(10, 10, 20, 20), 0.0, d),
            BoxRegion::new(10, 10, 20, 20)
        );
        assert_eq!(
            crop_window(BoxRegion::new(0, 0, 10, 10), 0.5, d),
            BoxRegion::new(0, 0, 15, 15)
        );
        // 0.15 * 24 = 3.6 → 4 per side
        assert_eq!(
            crop_window(BoxRegion::new(38, 38, 62, 62), DEFAULT_MARGIN_RATIO, d),
            BoxRegion::new(34, 34, 66, 66)
        );
    }

    #[test]
    fn crop_image_bounds() {
        let img = RgbImage::from_fn(6, 5, |x, y| Rgb([x as u8, y as u8, 7]));
        let d = ImageDims::of(&img).unwrap();
        assert_eq!(crop_image(&img, d.full_box()).unwrap(), img);
        let one = crop_image(&img, BoxRegion::new(3, 4, 3, 4)).unwrap();
        assert_eq!(one.dimensions(), (1, 1));
        assert_eq!(one.get_pixel(0, 0), &Rgb([3, 4, 7]));
        assert!(matches!(
            crop_image(&img, BoxRegion::new(3, 4, 6, 4)),
            Err(GeometryError::OutOfBounds(..))
        ));
    }

    #[test]
    fn whiten_extremes() {
        let img = RgbImage::from_fn(3, 3, |x, y| Rgb([x as u8, y as u8, 1]));
        let d = ImageDims::of(&img).unwrap();
        assert_eq!(whiten_background(&img, &BitMask::full(d)).unwrap(), img);
        let white = whiten_background(&img, &BitMask::empty(d)).unwrap();
        assert!(white.pixels().all(|p| *p == Rgb([255, 255, 255])));
        assert!(whiten_background(&img, &BitMask::full(dims(2, 3))).is_err());
    }

    #[test]
    fn filter_examples() {
        let d = dims(4, 4);
        let a = rect(d, BoxRegion::new(0, 0, 1, 1));
        let b = rect(d, BoxRegion::new(1, 0, 2, 1));
        let big = rect(d, BoxRegion::new(0, 0, 2, 1));
        let opts = FilterOptions::default();

        assert_eq!(filter_masks(&[a.clone()], opts).unwrap(), vec![a.clone()]);
        assert_eq!(
            filter_masks(&[a.clone(), a.clone()], opts).unwrap(),
            vec![a.clone()]
        );
        // IoU(a, b) = 1/3; larger mask comes first.
        assert_eq!(
            filter_masks(&[a.clone(), big.clone()], opts).unwrap(),
            vec![big.clone(), a.clone()]
        );
        // Ties keep input order.
        assert_eq!(
            filter_masks(&[b.clone(), a.clone()], opts).unwrap(),
            vec![b, a.clone()]
        );
        let speck = FilterOptions { min_area_ratio: 0.5, ..opts };
        assert!(filter_masks(&[a.clone()], speck).unwrap().is_empty());
        assert!(filter_masks(&[a, BitMask::empty(dims(2, 2))], opts).is_err());
    }

    #[test]
    fn wire_forms() {
        let c: VisualControl = serde_json::from_str(r#"{"points":[[5,6,1],[1,1,0]]}"#).unwrap();
        assert_eq!(
            c,
            VisualControl::Points(vec![LabeledPoint::positive(5, 6), LabeledPoint::negative(1, 1)])
        );
        let c: VisualControl = serde_json::from_str(r#"{"box":[8,9,2,3]}"#).unwrap();
        assert_eq!(c, VisualControl::Box(BoxRegion::new(8, 9, 2, 3)));
        let c: VisualControl = serde_json::from_str(r#"{"trajectory":[[0,0],[4,4]]}"#).unwrap();
        assert_eq!(c, VisualControl::Trajectory(Trajectory::new(vec![(0, 0), (4, 4)])));
        assert!(serde_json::from_str::<VisualControl>(r#"{"points":[[5,6,2]]}"#).is_err());
        assert!(serde_json::from_str::<VisualControl>(r#"{"box":[1,2,3,4],"points":[]}"#).is_err());
    }
}
