//! Temporal evaluation metrics: grounding recall and mIoU, action
//! segmentation MoF and segmental F1, highlight mAP and R1@0.5.
//!
//! Every "IoU >= t" test allows a slack of [`IOU_EPS`] so thresholds such as
//! 0.6 are met by intervals whose IoU is 0.6 up to rounding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::read_jsonl;

pub const IOU_EPS: f64 = 1e-9;
pub const DEFAULT_GROUNDING_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];
pub const DEFAULT_F1_OVERLAPS: [f64; 3] = [0.10, 0.25, 0.50];

/// 0.50, 0.55, ..., 0.95, each computed as an exact decimal.
pub fn highlight_iou_grid() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

fn meets(iou: f64, threshold: f64) -> bool {
    iou >= threshold - IOU_EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::Input(format!(
                "interval [{start}, {end}] is not finite"
            )));
        }
        if end < start {
            return Err(Error::Validation(format!(
                "interval end {end} precedes start {start}"
            )));
        }
        Ok(Interval { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.start, i.end]
    }
}

/// |a ∩ b| / |a ∪ b|, or 0 when the union is empty.
pub fn interval_iou(a: Interval, b: Interval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.end.max(b.end) - a.start.min(b.start);
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtThreshold {
    pub threshold: f64,
    pub value: f64,
}

fn lookup(values: &[AtThreshold], threshold: f64) -> Option<f64> {
    values
        .iter()
        .find(|v| (v.threshold - threshold).abs() < 1e-12)
        .map(|v| v.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub n_queries: usize,
    pub recall_at: Vec<AtThreshold>,
    pub mean_iou: f64,
}

impl GroundingReport {
    pub fn recall(&self, threshold: f64) -> Option<f64> {
        lookup(&self.recall_at, threshold)
    }
}

pub fn grounding_metrics(
    preds: &[Interval],
    gts: &[Interval],
    thresholds: &[f64],
) -> Result<GroundingReport> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth queries",
            preds.len(),
            gts.len()
        )));
    }
    if gts.is_empty() {
        return Err(Error::Input("no queries to evaluate".into()));
    }
    let ious: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(&p, &g)| interval_iou(p, g))
        .collect();
    let n = ious.len() as f64;
    let recall_at = thresholds
        .iter()
        .map(|&t| AtThreshold {
            threshold: t,
            value: ious.iter().filter(|&&iou| meets(iou, t)).count() as f64 / n,
        })
        .collect();
    Ok(GroundingReport {
        n_queries: ious.len(),
        recall_at,
        mean_iou: ious.iter().sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInterval {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl LabeledInterval {
    fn interval(&self) -> Interval {
        Interval {
            start: self.start,
            end: self.end,
        }
    }
}

/// Ordered, non-overlapping labeled intervals, optionally with one label per
/// frame for MoF.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegmentation {
    pub segments: Vec<LabeledInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_labels: Option<Vec<String>>,
}

impl LabeledSegmentation {
    pub fn new(segments: Vec<LabeledInterval>) -> Result<Self> {
        let seg = LabeledSegmentation {
            segments,
            frame_labels: None,
        };
        seg.validate()?;
        Ok(seg)
    }

    /// Runs of equal labels become segments in frame units: a run over
    /// frames `i..j` is the interval `[i, j)`.
    pub fn from_frame_labels(labels: Vec<String>) -> Self {
        let mut segments: Vec<LabeledInterval> = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            match segments.last_mut() {
                Some(last) if &last.label == label => last.end = (i + 1) as f64,
                _ => segments.push(LabeledInterval {
                    start: i as f64,
                    end: (i + 1) as f64,
                    label: label.clone(),
                }),
            }
        }
        LabeledSegmentation {
            segments,
            frame_labels: Some(labels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            Interval::new(s.start, s.end)?;
            if i > 0 && s.start < self.segments[i - 1].end {
                return Err(Error::Validation(format!(
                    "segment {i} starts at {} inside segment {}",
                    s.start,
                    i - 1
                )));
            }
        }
        Ok(())
    }

    /// Label of each frame `k` at time `k / fps` over `[from, to)`, using
    /// half-open segment membership. Frames outside every segment get `None`.
    pub fn rasterize(&self, fps: f64, from: f64, to: f64) -> Vec<Option<&str>> {
        let first = (from * fps).ceil().max(0.0) as u64;
        let mut out = Vec::new();
        let mut seg = 0;
        let mut k = first;
        loop {
            let t = k as f64 / fps;
            if t >= to {
                break;
            }
            while seg < self.segments.len() && self.segments[seg].end <= t {
                seg += 1;
            }
            let label = self
                .segments
                .get(seg)
                .filter(|s| s.start <= t)
                .map(|s| s.label.as_str());
            out.push(label);
            k += 1;
        }
        out
    }
}

/// True positive, false positive and false negative counts for one overlap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MatchCounts {
    pub fn f1(&self) -> f64 {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }

    fn add(&mut self, other: MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Greedy one-to-one matching of same-label segments by descending IoU,
/// ties going to the lower prediction index and then the lower ground-truth
/// index. Pairs below `overlap` never match.
pub fn segmental_matches(
    pred: &[LabeledInterval],
    gt: &[LabeledInterval],
    overlap: f64,
) -> MatchCounts {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            if p.label != g.label {
                continue;
            }
            let iou = interval_iou(p.interval(), g.interval());
            if meets(iou, overlap) {
                pairs.push((iou, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut tp = 0;
    for (_, pi, gi) in pairs {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            tp += 1;
        }
    }
    MatchCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSegReport {
    pub n_frames: usize,
    pub mof: f64,
    pub f1_at: Vec<AtThreshold>,
}

impl ActionSegReport {
    pub fn f1(&self, overlap: f64) -> Option<f64> {
        lookup(&self.f1_at, overlap)
    }
}

/// Per-video frame agreement and segment match counts, ready for pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSegCounts {
    pub correct_frames: usize,
    pub total_frames: usize,
    pub matches: Vec<(f64, MatchCounts)>,
}

/// Frame and segment counts for one video.
///
/// When both sides carry frame labels those are compared directly. Otherwise
/// both are rasterized at `fps` over the ground truth's span.
pub fn action_seg_counts(
    pred: &LabeledSegmentation,
    gt: &LabeledSegmentation,
    overlaps: &[f64],
    fps: Option<f64>,
) -> Result<ActionSegCounts> {
    if gt.segments.is_empty() {
        return Err(Error::Input("ground-truth segmentation is empty".into()));
    }
    pred.validate()?;
    gt.validate()?;

    let (correct, total) = match (&pred.frame_labels, &gt.frame_labels) {
        (Some(p), Some(g)) => {
            if p.len() != g.len() {
                return Err(Error::Shape(format!(
                    "{} predicted frame labels for {} ground-truth frames",
                    p.len(),
                    g.len()
                )));
            }
            (p.iter().zip(g).filter(|(a, b)| a == b).count(), g.len())
        }
        _ => {
            let fps = fps.ok_or_else(|| {
                Error::Input("a frame rate is needed to rasterize interval segmentations".into())
            })?;
            if !(fps > 0.0 && fps.is_finite()) {
                return Err(Error::Input(format!(
                    "frame rate must be positive, got {fps}"
                )));
            }
            let from = gt.segments[0].start;
            let to = gt.segments[gt.segments.len() - 1].end;
            let g = gt.rasterize(fps, from, to);
            let p = pred.rasterize(fps, from, to);
            let correct = g
                .iter()
                .zip(&p)
                .filter(|(a, b)| a.is_some() && a == b)
                .count();
            (correct, g.len())
        }
    };
    if total == 0 {
        return Err(Error::Input("ground truth covers no frames".into()));
    }
    let matches = overlaps
        .iter()
        .map(|&k| (k, segmental_matches(&pred.segments, &gt.segments, k)))
        .collect();
    Ok(ActionSegCounts {
        correct_frames: correct,
        total_frames: total,
        matches,
    })
}

/// MoF pooled over all frames and F1 from pooled match counts.
pub fn pool_action_seg(counts: &[ActionSegCounts], overlaps: &[f64]) -> Result<ActionSegReport> {
    if counts.is_empty() {
        return Err(Error::Input("no videos to evaluate".into()));
    }
    let correct: usize = counts.iter().map(|c| c.correct_frames).sum();
    let total: usize = counts.iter().map(|c| c.total_frames).sum();
    let f1_at = overlaps
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mut pooled = MatchCounts::default();
            for c in counts {
                pooled.add(c.matches[i].1);
            }
            AtThreshold {
                threshold: k,
                value: pooled.f1(),
            }
        })
        .collect();
    Ok(ActionSegReport {
        n_frames: total,
        mof: ratio(correct, total),
        f1_at,
    })
}

pub fn action_seg_metrics(
    pred: &LabeledSegmentation,
    gt: &LabeledSegmentation,
    overlaps: &[f64],
    fps: Option<f64>,
) -> Result<ActionSegReport> {
    let counts = action_seg_counts(pred, gt, overlaps, fps)?;
    pool_action_seg(&[counts], overlaps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredMoment {
    pub interval: Interval,
    pub score: f64,
}

/// Predictions ranked by descending score; equal scores keep input order.
fn ranked(preds: &[ScoredMoment]) -> Vec<&ScoredMoment> {
    let mut order: Vec<&ScoredMoment> = preds.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    order
}

/// All-points interpolated average precision at one IoU threshold.
///
/// Each ranked prediction claims the unmatched ground truth it overlaps most;
/// it is a true positive when that IoU reaches `threshold`.
pub fn average_precision(preds: &[ScoredMoment], gts: &[Interval], threshold: f64) -> f64 {
    if gts.is_empty() || preds.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(preds.len());
    let mut recall = Vec::with_capacity(preds.len());
    for (rank, p) in ranked(preds).into_iter().enumerate() {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(gi, _)| !used[*gi])
            .map(|(gi, g)| (gi, interval_iou(p.interval, *g)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((gi, iou)) = best {
            if meets(iou, threshold) {
                used[gi] = true;
                tp += 1;
            }
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / gts.len() as f64);
    }
    // Precision envelope from the right, then the area under the step curve.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightQuery {
    pub query_id: String,
    pub preds: Vec<ScoredMoment>,
    pub gts: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightReport {
    pub n_queries: usize,
    pub map: f64,
    pub r1_at_05: f64,
    pub ap_at: Vec<AtThreshold>,
    /// Queries skipped because they have no ground truth.
    pub excluded_queries: Vec<String>,
}

pub fn highlight_metrics(queries: &[HighlightQuery], iou_grid: &[f64]) -> Result<HighlightReport> {
    if iou_grid.is_empty() {
        return Err(Error::Input("IoU grid is empty".into()));
    }
    for q in queries {
        if let Some(p) = q.preds.iter().find(|p| !p.score.is_finite()) {
            return Err(Error::Input(format!(
                "query {} has a non-finite score {}",
                q.query_id, p.score
            )));
        }
    }
    let (kept, excluded): (Vec<&HighlightQuery>, Vec<&HighlightQuery>) =
        queries.iter().partition(|q| !q.gts.is_empty());
    if kept.is_empty() {
        return Err(Error::Input("no query has ground truth".into()));
    }
    let n = kept.len() as f64;
    let ap_at: Vec<AtThreshold> = iou_grid
        .iter()
        .map(|&t| AtThreshold {
            threshold: t,
            value: kept
                .iter()
                .map(|q| average_precision(&q.preds, &q.gts, t))
                .sum::<f64>()
                / n,
        })
        .collect();
    let map = kept
        .iter()
        .map(|q| {
            iou_grid
                .iter()
                .map(|&t| average_precision(&q.preds, &q.gts, t))
                .sum::<f64>()
                / iou_grid.len() as f64
        })
        .sum::<f64>()
        / n;
    let r1_hits = kept
        .iter()
        .filter(|q| match ranked(&q.preds).first() {
            Some(top) => q
                .gts
                .iter()
                .any(|g| meets(interval_iou(top.interval, *g), 0.5)),
            None => false,
        })
        .count();
    Ok(HighlightReport {
        n_queries: kept.len(),
        map,
        r1_at_05: r1_hits as f64 / n,
        ap_at,
        excluded_queries: excluded.iter().map(|q| q.query_id.clone()).collect(),
    })
}

/// `{query_id, start, end}` with an optional `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentRecord {
    pub query_id: String,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl MomentRecord {
    pub fn interval(&self) -> Result<Interval> {
        Interval::new(self.start, self.end)
    }
}

/// `{start, end, label}` with an optional `video_id` grouping key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    #[serde(default)]
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub label: String,
}

pub fn load_moments(path: &Path) -> Result<Vec<MomentRecord>> {
    read_jsonl(path)
}

pub fn load_segments(path: &Path) -> Result<Vec<SegmentRecord>> {
    read_jsonl(path)
}

/// Aligns one prediction and one ground truth per query id.
pub fn grounding_from_records(
    preds: &[MomentRecord],
    gts: &[MomentRecord],
    thresholds: &[f64],
) -> Result<GroundingReport> {
    let index = |records: &[MomentRecord], what: &str| -> Result<BTreeMap<String, Interval>> {
        let mut map = BTreeMap::new();
        for r in records {
            if map.insert(r.query_id.clone(), r.interval()?).is_some() {
                return Err(Error::Input(format!(
                    "{what} has query {} twice",
                    r.query_id
                )));
            }
        }
        Ok(map)
    };
    let p = index(preds, "predictions")?;
    let g = index(gts, "ground truth")?;
    let p_ids: BTreeSet<&String> = p.keys().collect();
    let g_ids: BTreeSet<&String> = g.keys().collect();
    if p_ids != g_ids {
        let missing: Vec<&&String> = g_ids.difference(&p_ids).take(5).collect();
        let extra: Vec<&&String> = p_ids.difference(&g_ids).take(5).collect();
        return Err(Error::Shape(format!(
            "query ids differ: missing predictions for {missing:?}, unexpected predictions for {extra:?}"
        )));
    }
    let pv: Vec<Interval> = p.values().copied().collect();
    let gv: Vec<Interval> = g.values().copied().collect();
    grounding_metrics(&pv, &gv, thresholds)
}

/// Groups moments by query id; queries appear in ground-truth order, then
/// prediction-only queries.
pub fn highlight_queries_from_records(
    preds: &[MomentRecord],
    gts: &[MomentRecord],
) -> Result<Vec<HighlightQuery>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, HighlightQuery> = BTreeMap::new();
    for id in gts.iter().chain(preds).map(|r| &r.query_id) {
        if !by_id.contains_key(id) {
            order.push(id.clone());
            by_id.insert(
                id.clone(),
                HighlightQuery {
                    query_id: id.clone(),
                    preds: Vec::new(),
                    gts: Vec::new(),
                },
            );
        }
    }
    for g in gts {
        let iv = g.interval()?;
        by_id
            .get_mut(&g.query_id)
            .expect("inserted above")
            .gts
            .push(iv);
    }
    for p in preds {
        let score = p.score.ok_or_else(|| {
            Error::Input(format!("prediction for query {} has no score", p.query_id))
        })?;
        let iv = p.interval()?;
        by_id
            .get_mut(&p.query_id)
            .expect("inserted above")
            .preds
            .push(ScoredMoment {
                interval: iv,
                score,
            });
    }
    Ok(order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("inserted above"))
        .collect())
}

/// Groups segment records by video id and evaluates them together.
pub fn action_seg_from_records(
    preds: &[SegmentRecord],
    gts: &[SegmentRecord],
    overlaps: &[f64],
    fps: f64,
) -> Result<ActionSegReport> {
    let group = |records: &[SegmentRecord]| {
        let mut map: BTreeMap<String, Vec<LabeledInterval>> = BTreeMap::new();
        for r in records {
            map.entry(r.video_id.clone())
                .or_default()
                .push(LabeledInterval {
                    start: r.start,
                    end: r.end,
                    label: r.label.clone(),
                });
        }
        map
    };
    let p = group(preds);
    let g = group(gts);
    let mut counts = Vec::with_capacity(g.len());
    for (video, gt_segments) in g {
        let pred_segments = p.get(&video).cloned().unwrap_or_default();
        let pred = LabeledSegmentation::new(pred_segments)?;
        let gt = LabeledSegmentation::new(gt_segments)?;
        counts.push(action_seg_counts(&pred, &gt, overlaps, Some(fps))?);
    }
    pool_action_seg(&counts, overlaps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    fn seg(a: f64, b: f64, l: &str) -> LabeledInterval {
        LabeledInterval {
            start: a,
            end: b,
            label: l.into(),
        }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(interval_iou(iv(2.0, 7.0), iv(2.0, 7.0)), 1.0);
        assert_eq!(interval_iou(iv(0.0, 5.0), iv(5.0, 10.0)), 0.0);
        assert!((interval_iou(iv(0.0, 10.0), iv(5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(interval_iou(iv(3.0, 3.0), iv(3.0, 3.0)), 0.0);
    }

    #[test]
    fn grounding_perfect_and_disjoint() {
        let g = vec![iv(0.0, 1.0), iv(2.0, 5.0)];
        let r = grounding_metrics(&g, &g, &DEFAULT_GROUNDING_THRESHOLDS).unwrap();
        assert_eq!(r.mean_iou, 1.0);
        assert!(r.recall_at.iter().all(|a| a.value == 1.0));

        let p = vec![iv(5.0, 6.0), iv(0.0, 1.0)];
        let r = grounding_metrics(&p, &g, &DEFAULT_GROUNDING_THRESHOLDS).unwrap();
        assert_eq!(r.mean_iou, 0.0);
        assert_eq!(r.recall(0.3), Some(0.0));

        assert!(matches!(
            grounding_metrics(&p[..1], &g, &[0.5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn identical_segmentation_scores_one() {
        let gt = LabeledSegmentation::new(vec![seg(0.0, 3.0, "a"), seg(3.0, 7.0, "b")]).unwrap();
        let r = action_seg_metrics(&gt, &gt, &DEFAULT_F1_OVERLAPS, Some(10.0)).unwrap();
        assert_eq!(r.mof, 1.0);
        assert_eq!(r.n_frames, 70);
        assert!(r.f1_at.iter().all(|a| a.value == 1.0));
    }

    #[test]
    fn alternating_half_correct_mof() {
        let gt: Vec<String> = (0..8)
            .map(|i| if i % 2 == 0 { "a" } else { "b" }.into())
            .collect();
        let pred: Vec<String> = (0..8).map(|_| "a".into()).collect();
        let r = action_seg_metrics(
            &LabeledSegmentation::from_frame_labels(pred),
            &LabeledSegmentation::from_frame_labels(gt),
            &DEFAULT_F1_OVERLAPS,
            None,
        )
        .unwrap();
        assert_eq!(r.mof, 0.5);
    }

    #[test]
    fn empty_ground_truth_is_an_input_error() {
        let empty = LabeledSegmentation::default();
        assert!(matches!(
            action_seg_metrics(&empty, &empty, &[0.5], Some(1.0)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn f1_counts_unmatched_predictions() {
        let gt = vec![seg(0.0, 10.0, "a")];
        let pred = vec![seg(0.0, 9.0, "a"), seg(9.0, 10.0, "a")];
        let c = segmental_matches(&pred, &gt, 0.5);
        assert_eq!(
            c,
            MatchCounts {
                tp: 1,
                fp: 1,
                fn_: 0
            }
        );
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_exact_highlight() {
        let q = HighlightQuery {
            query_id: "q".into(),
            preds: vec![ScoredMoment {
                interval: iv(4.0, 8.0),
                score: 0.9,
            }],
            gts: vec![iv(4.0, 8.0)],
        };
        let r = highlight_metrics(&[q], &highlight_iou_grid()).unwrap();
        assert_eq!((r.map, r.r1_at_05), (1.0, 1.0));
    }

    #[test]
    fn iou_point_six_on_a_short_grid() {
        let q = HighlightQuery {
            query_id: "q".into(),
            preds: vec![ScoredMoment {
                interval: iv(0.0, 6.0),
                score: 1.0,
            }],
            gts: vec![iv(0.0, 10.0)],
        };
        let grid = [0.5, 0.55, 0.6, 0.65];
        let r = highlight_metrics(&[q], &grid).unwrap();
        let aps: Vec<f64> = r.ap_at.iter().map(|a| a.value).collect();
        assert_eq!(aps, vec![1.0, 1.0, 1.0, 0.0]);
        assert!((r.map - 0.75).abs() < 1e-12);
    }

    #[test]
    fn queries_without_ground_truth_are_reported() {
        let qs = vec![
            HighlightQuery {
                query_id: "a".into(),
                preds: vec![],
                gts: vec![iv(0.0, 1.0)],
            },
            HighlightQuery {
                query_id: "b".into(),
                preds: vec![],
                gts: vec![],
            },
        ];
        let r = highlight_metrics(&qs, &highlight_iou_grid()).unwrap();
        assert_eq!(r.excluded_queries, vec!["b".to_string()]);
        assert_eq!(r.n_queries, 1);
        assert_eq!(r.map, 0.0);
    }

    #[test]
    fn grid_is_exact_decimals() {
        let g = highlight_iou_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[2], 0.6);
        assert_eq!(g[9], 0.95);
    }
}
