//! Event boundary detection.
//!
//! Frame-difference scores are smoothed with a Gaussian, thresholded local
//! maxima split the video into sub-segments, and adjacent sub-segments whose
//! boundary frames are consistent (global feature similarity plus instance
//! similarity discounted by displacement) are merged back together.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal_space::NormalizedTime;
use crate::vecmath;

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        if coords
            .iter()
            .any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0)
        {
            return Err(Error::Input(format!(
                "box {coords:?} must lie in normalized [0, 1] coordinates"
            )));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::Input(format!(
                "box {coords:?} has zero or negative area"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Center distance divided by the image diagonal, clamped to `[0, 1]`.
    pub fn normalized_center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).hypot(ay - by) / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u32>,
    pub class_label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub roi_feature: Vec<f64>,
}

/// 8-bit luminance plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LumaGrid {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!(
                "luma grid {height}x{width} with {} bytes",
                data.len()
            )));
        }
        Ok(LumaGrid {
            height,
            width,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: u64,
    pub time: NormalizedTime,
    pub feature: Vec<f64>,
    pub luma: Option<LumaGrid>,
    pub detections: Vec<Detection>,
}

/// Inclusive range of positions in a frame list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

/// A contiguous run of frames. Frame bounds are inclusive `FrameRecord`
/// indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub start_time: NormalizedTime,
    pub end_time: NormalizedTime,
    pub start_frame: u64,
    pub end_frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl Event {
    fn from_span(span: Span, frames: &[FrameRecord]) -> Event {
        let first = &frames[span.start];
        let last = &frames[span.end];
        Event {
            start_time: first.time,
            end_time: last.time,
            start_frame: first.index,
            end_frame: last.index,
            caption: None,
        }
    }

    pub fn contains_frame(&self, frame: u64) -> bool {
        self.start_frame <= frame && frame <= self.end_frame
    }
}

/// Checks frame ordering and per-video shape consistency.
pub fn validate_frames(frames: &[FrameRecord]) -> Result<()> {
    let Some(first) = frames.first() else {
        return Err(Error::Input("video has no frames".into()));
    };
    for (pos, frame) in frames.iter().enumerate() {
        if frame.feature.len() != first.feature.len() {
            return Err(Error::Shape(format!(
                "frame {} feature width {} differs from {}",
                frame.index,
                frame.feature.len(),
                first.feature.len()
            )));
        }
        if frame.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "frame {} feature is not finite",
                frame.index
            )));
        }
        if pos > 0 {
            let prev = &frames[pos - 1];
            if frame.index <= prev.index {
                return Err(Error::Input(format!(
                    "frame indices must increase strictly ({} after {})",
                    frame.index, prev.index
                )));
            }
            if frame.time < prev.time {
                return Err(Error::Input(format!(
                    "frame {} time goes backwards",
                    frame.index
                )));
            }
        }
        match (&frame.luma, &first.luma) {
            (Some(a), Some(b)) if (a.height, a.width) != (b.height, b.width) => {
                return Err(Error::Shape(format!(
                    "frame {} luma is {}x{}, expected {}x{}",
                    frame.index, a.height, a.width, b.height, b.width
                )));
            }
            _ => {}
        }
        for det in &frame.detections {
            if det.roi_feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "frame {} has a non-finite roi feature",
                    frame.index
                )));
            }
        }
    }
    Ok(())
}

/// Mean absolute luma difference between consecutive frames, in `[0, 1]`.
pub fn frame_diff_scores(frames: &[FrameRecord]) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::Input("need at least two frames to score".into()));
    }
    let grids = frames
        .iter()
        .map(|f| {
            f.luma.as_ref().ok_or_else(|| {
                Error::Input(format!(
                    "frame {} has no luma; supply precomputed scores",
                    f.index
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let shape = (grids[0].height, grids[0].width);
    if let Some(bad) = grids.iter().position(|g| (g.height, g.width) != shape) {
        return Err(Error::Input(format!(
            "frame {} luma shape differs; supply precomputed scores",
            frames[bad].index
        )));
    }
    let pixels = (shape.0 * shape.1) as f64;
    Ok(grids
        .windows(2)
        .map(|w| {
            let total: u64 = w[0]
                .data
                .iter()
                .zip(&w[1].data)
                .map(|(&a, &b)| u64::from(a.abs_diff(b)))
                .sum();
            total as f64 / pixels / 255.0
        })
        .collect())
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Gaussian smoothing with reflect padding (`d c b a | a b c d | d c b a`).
pub fn gaussian_smooth(scores: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Input("cannot smooth an empty score array".into()));
    }
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as i64;
    let n = scores.len() as i64;
    let reflect = |i: i64| -> usize {
        let period = 2 * n;
        let j = i.rem_euclid(period);
        (if j < n { j } else { period - 1 - j }) as usize
    };
    Ok((0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(t, w)| w * scores[reflect(i + t as i64 - radius)])
                .sum()
        })
        .collect())
}

/// Local maxima strictly above `threshold`. Boundary entries only compare
/// with their one neighbor; a plateau reports its leftmost index. Split `i`
/// separates frame positions `i` and `i + 1`.
pub fn find_split_points(smoothed: &[f64], threshold: f64) -> Vec<usize> {
    let n = smoothed.len();
    let is_peak = |i: usize| {
        smoothed[i] > threshold
            && (i == 0 || smoothed[i] >= smoothed[i - 1])
            && (i + 1 == n || smoothed[i] >= smoothed[i + 1])
    };
    (0..n)
        .filter(|&i| is_peak(i) && !(i > 0 && smoothed[i - 1] == smoothed[i] && is_peak(i - 1)))
        .collect()
}

/// Sub-segments delimited by split points over `n_frames` positions.
pub fn spans_from_splits(n_frames: usize, splits: &[usize]) -> Vec<Span> {
    let mut spans = Vec::with_capacity(splits.len() + 1);
    let mut start = 0;
    for &s in splits {
        if s + 1 < n_frames && s >= start {
            spans.push(Span { start, end: s });
            start = s + 1;
        }
    }
    if n_frames > 0 {
        spans.push(Span {
            start,
            end: n_frames - 1,
        });
    }
    spans
}

/// Boundary consistency between the last frame of one sub-segment and the
/// first frame of the next. Lies in `[-2, 2]`.
pub fn consistency(prev_last: &FrameRecord, next_first: &FrameRecord) -> Result<f64> {
    let global = vecmath::cosine(&prev_last.feature, &next_first.feature).ok_or_else(|| {
        Error::Normalization(format!(
            "zero-norm frame feature at frame {} or {}",
            prev_last.index, next_first.index
        ))
    })?;

    let prev = instances_by_track(prev_last)?;
    let next = instances_by_track(next_first)?;
    let mut union: Vec<u32> = prev.keys().chain(next.keys()).copied().collect();
    union.sort_unstable();
    union.dedup();
    if union.is_empty() {
        return Ok(global);
    }

    let mut instance_sum = 0.0;
    for id in &union {
        // A track seen in only one frame has distance 1, so its term is 0.
        let (Some(a), Some(b)) = (prev.get(id), next.get(id)) else {
            continue;
        };
        let roi = vecmath::cosine(&a.roi_feature, &b.roi_feature)
            .ok_or_else(|| Error::Normalization(format!("zero-norm roi feature for track {id}")))?;
        instance_sum += roi * (1.0 - a.bbox.normalized_center_distance(&b.bbox));
    }
    Ok(global + instance_sum / union.len() as f64)
}

fn instances_by_track(frame: &FrameRecord) -> Result<BTreeMap<u32, &Detection>> {
    let mut map = BTreeMap::new();
    for det in &frame.detections {
        let id = det.track_id.ok_or_else(|| {
            Error::Input(format!(
                "frame {} has a detection without track_id; link tracks first",
                frame.index
            ))
        })?;
        if map.insert(id, det).is_some() {
            return Err(Error::Input(format!(
                "frame {} lists track {id} twice",
                frame.index
            )));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitThreshold {
    /// `mean + c * std` of the smoothed scores.
    Adaptive {
        c: f64,
    },
    Fixed {
        value: f64,
    },
}

impl SplitThreshold {
    pub fn resolve(&self, smoothed: &[f64]) -> f64 {
        match *self {
            SplitThreshold::Fixed { value } => value,
            SplitThreshold::Adaptive { c } => {
                let n = smoothed.len() as f64;
                let mean = smoothed.iter().sum::<f64>() / n;
                let var = smoothed
                    .iter()
                    .map(|s| (s - mean) * (s - mean))
                    .sum::<f64>()
                    / n;
                mean + c * var.sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub sigma: f64,
    pub split_threshold: SplitThreshold,
    pub merge_threshold: f64,
    /// Events shorter than this many frames are folded into their more
    /// consistent neighbor. `0` and `1` disable the rule.
    pub min_event_frames: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            sigma: 2.0,
            split_threshold: SplitThreshold::Adaptive { c: 1.0 },
            merge_threshold: 1.0,
            min_event_frames: 3,
        }
    }
}

/// Single left-to-right merge pass followed by short-event folding.
///
/// Each comparison looks at the last frame of the sub-segment before the
/// boundary and the first frame after it; a merged run's last frame is the
/// last frame of its latest member, so a second pass can never merge more.
pub fn merge_segments(
    subsegments: &[Span],
    frames: &[FrameRecord],
    merge_threshold: f64,
    min_event_frames: usize,
) -> Result<Vec<Event>> {
    let spans = merge_spans(subsegments, frames, merge_threshold, min_event_frames)?;
    Ok(spans
        .into_iter()
        .map(|s| Event::from_span(s, frames))
        .collect())
}

fn merge_spans(
    subsegments: &[Span],
    frames: &[FrameRecord],
    merge_threshold: f64,
    min_event_frames: usize,
) -> Result<Vec<Span>> {
    check_coverage(subsegments, frames.len())?;
    let mut merged: Vec<Span> = Vec::with_capacity(subsegments.len());
    for &next in subsegments {
        match merged.last_mut() {
            Some(current)
                if consistency(&frames[current.end], &frames[next.start])? > merge_threshold =>
            {
                current.end = next.end;
            }
            _ => merged.push(next),
        }
    }

    while merged.len() > 1 {
        let Some(p) = merged.iter().position(|s| s.len() < min_event_frames) else {
            break;
        };
        let left = match p {
            0 => None,
            _ => Some(consistency(
                &frames[merged[p - 1].end],
                &frames[merged[p].start],
            )?),
        };
        let right = match merged.get(p + 1) {
            None => None,
            Some(r) => Some(consistency(&frames[merged[p].end], &frames[r.start])?),
        };
        let into_left = match (left, right) {
            (Some(l), Some(r)) => l >= r,
            (Some(_), None) => true,
            _ => false,
        };
        if into_left {
            merged[p - 1].end = merged[p].end;
            merged.remove(p);
        } else {
            merged[p + 1].start = merged[p].start;
            merged.remove(p);
        }
    }
    Ok(merged)
}

fn check_coverage(spans: &[Span], n_frames: usize) -> Result<()> {
    let mut expected = 0;
    for s in spans {
        if s.start != expected || s.end < s.start || s.end >= n_frames {
            return Err(Error::Input(format!(
                "sub-segments must cover frames 0..{n_frames} in order without gaps \
                 (found {}..={} where {expected} was expected)",
                s.start, s.end
            )));
        }
        expected = s.end + 1;
    }
    if expected != n_frames {
        return Err(Error::Input(format!(
            "sub-segments stop at frame position {expected} of {n_frames}"
        )));
    }
    Ok(())
}

/// Full boundary detection: scores (from luma unless supplied) → smoothing →
/// split points → consistency merge.
pub fn segment_video(
    frames: &[FrameRecord],
    config: &SegmentConfig,
    precomputed_scores: Option<&[f64]>,
) -> Result<Vec<Event>> {
    validate_frames(frames)?;
    if frames.len() == 1 {
        return Ok(vec![Event::from_span(Span { start: 0, end: 0 }, frames)]);
    }
    let scores = match precomputed_scores {
        Some(s) if s.len() != frames.len() - 1 => {
            return Err(Error::Shape(format!(
                "expected {} precomputed scores, got {}",
                frames.len() - 1,
                s.len()
            )));
        }
        Some(s) => s.to_vec(),
        None => frame_diff_scores(frames)?,
    };
    let smoothed = gaussian_smooth(&scores, config.sigma)?;
    let threshold = config.split_threshold.resolve(&smoothed);
    let splits = find_split_points(&smoothed, threshold);
    let spans = spans_from_splits(frames.len(), &splits);
    merge_segments(
        &spans,
        frames,
        config.merge_threshold,
        config.min_event_frames,
    )
}

/// Attaches tracked detections to frames by frame index.
pub fn attach_detections(frames: &mut [FrameRecord], tracks: &[crate::tracking::InstanceTrack]) {
    let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for track in tracks {
        for obs in &track.observations {
            by_frame
                .entry(obs.frame_index)
                .or_default()
                .push(Detection {
                    track_id: Some(track.track_id),
                    class_label: track.class_label.clone(),
                    bbox: obs.bbox,
                    roi_feature: obs.roi_feature.clone(),
                });
        }
    }
    for frame in frames.iter_mut() {
        if let Some(dets) = by_frame.remove(&frame.index) {
            frame.detections = dets;
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    index: u64,
    time: NormalizedTime,
    feature: Vec<f64>,
    #[serde(default)]
    luma: Option<LumaRef>,
    #[serde(default)]
    detections: Vec<Detection>,
}

/// Pointer to a raw 8-bit row-major luma plane inside a sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LumaRef {
    pub path: PathBuf,
    pub shape: [usize; 2],
    #[serde(default)]
    pub offset: u64,
}

/// Reads a frames JSONL file; luma sidecar paths resolve against the
/// file's directory.
pub fn load_frames(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FrameLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        let luma = match parsed.luma {
            None => None,
            Some(r) => Some(read_luma(&base.join(&r.path), &r)?),
        };
        frames.push(FrameRecord {
            index: parsed.index,
            time: parsed.time,
            feature: parsed.feature,
            luma,
            detections: parsed.detections,
        });
    }
    validate_frames(&frames)?;
    Ok(frames)
}

fn read_luma(path: &Path, r: &LumaRef) -> Result<LumaGrid> {
    let [h, w] = r.shape;
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    file.seek(SeekFrom::Start(r.offset))
        .map_err(|e| Error::io(path, e))?;
    let mut data = vec![0u8; h * w];
    file.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
    LumaGrid::new(h, w, data)
}
