//! Brute-force reference implementations of the evaluation metrics, written
//! without sharing code with the library. `check_all` compares both sides on
//! seeded random instances.

use momentkit::metrics::{
    action_seg_metrics, grounding_metrics, highlight_metrics, HighlightQuery, Interval,
    LabeledInterval, LabeledSegmentation, ScoredMoment, IOU_EPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;

pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn reaches(v: f64, t: f64) -> bool {
    v >= t - IOU_EPS
}

pub fn grounding(preds: &[(f64, f64)], gts: &[(f64, f64)], thresholds: &[f64]) -> (Vec<f64>, f64) {
    let mut hits = vec![0usize; thresholds.len()];
    let mut sum = 0.0;
    for q in 0..gts.len() {
        let v = iou(preds[q], gts[q]);
        sum += v;
        for (i, &t) in thresholds.iter().enumerate() {
            if reaches(v, t) {
                hits[i] += 1;
            }
        }
    }
    let n = gts.len() as f64;
    (hits.iter().map(|&h| h as f64 / n).collect(), sum / n)
}

fn label_at(segs: &[(f64, f64, String)], t: f64) -> Option<&str> {
    segs.iter()
        .find(|s| s.0 <= t && t < s.1)
        .map(|s| s.2.as_str())
}

/// Frames `k / fps` inside the ground truth's overall span.
pub fn mof(pred: &[(f64, f64, String)], gt: &[(f64, f64, String)], fps: f64) -> f64 {
    let from = gt.first().unwrap().0;
    let to = gt.last().unwrap().1;
    let (mut correct, mut total) = (0usize, 0usize);
    let mut k = (from * fps).ceil() as i64;
    while (k as f64 / fps) < to {
        let t = k as f64 / fps;
        let g = label_at(gt, t);
        if g.is_some() && g == label_at(pred, t) {
            correct += 1;
        }
        total += 1;
        k += 1;
    }
    correct as f64 / total as f64
}

fn f1_from(tp: usize, n_pred: usize, n_gt: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / n_pred as f64;
    let r = tp as f64 / n_gt as f64;
    2.0 * p * r / (p + r)
}

/// Repeatedly takes the highest-IoU eligible pair among unused segments.
pub fn greedy_tp(pred: &[(f64, f64, String)], gt: &[(f64, f64, String)], k: f64) -> usize {
    let mut pu = vec![false; pred.len()];
    let mut gu = vec![false; gt.len()];
    let mut tp = 0;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, p) in pred.iter().enumerate() {
            for (j, g) in gt.iter().enumerate() {
                if pu[i] || gu[j] || p.2 != g.2 {
                    continue;
                }
                let v = iou((p.0, p.1), (g.0, g.1));
                if !reaches(v, k) {
                    continue;
                }
                if best.is_none_or(|b| v > b.0) {
                    best = Some((v, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                pu[i] = true;
                gu[j] = true;
                tp += 1;
            }
            None => return tp,
        }
    }
}

/// Largest number of one-to-one eligible pairs over every assignment.
pub fn exhaustive_tp(pred: &[(f64, f64, String)], gt: &[(f64, f64, String)], k: f64) -> usize {
    fn go(
        i: usize,
        pred: &[(f64, f64, String)],
        gt: &[(f64, f64, String)],
        k: f64,
        used: &mut Vec<bool>,
    ) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, pred, gt, k, used);
        for j in 0..gt.len() {
            if used[j]
                || pred[i].2 != gt[j].2
                || !reaches(iou((pred[i].0, pred[i].1), (gt[j].0, gt[j].1)), k)
            {
                continue;
            }
            used[j] = true;
            best = best.max(1 + go(i + 1, pred, gt, k, used));
            used[j] = false;
        }
        best
    }
    go(0, pred, gt, k, &mut vec![false; gt.len()])
}

/// Rank-wise AP: the mean over ground truths of the best precision at or
/// after the rank where each one is recovered.
pub fn average_precision(preds: &[((f64, f64), f64)], gts: &[(f64, f64)], t: f64) -> f64 {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].1.partial_cmp(&preds[a].1).unwrap().then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut is_tp = Vec::new();
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] {
                continue;
            }
            let v = iou(preds[i].0, *g);
            if best.is_none_or(|b| v > b.1) {
                best = Some((j, v));
            }
        }
        let hit = matches!(best, Some((_, v)) if reaches(v, t));
        if let (true, Some((j, _))) = (hit, best) {
            used[j] = true;
        }
        is_tp.push(hit);
    }
    let precision_at =
        |r: usize| is_tp[..=r].iter().filter(|&&h| h).count() as f64 / (r + 1) as f64;
    let mut ap = 0.0;
    for r in 0..is_tp.len() {
        if is_tp[r] {
            ap += (r..is_tp.len()).map(precision_at).fold(0.0, f64::max);
        }
    }
    ap / gts.len() as f64
}

fn random_interval(rng: &mut ChaCha8Rng, span: f64) -> (f64, f64) {
    // Half-second grid so ties and touching intervals show up often.
    let a = (rng.random_range(0.0..span) * 2.0).round() / 2.0;
    let len = (rng.random_range(0.0..span / 2.0) * 2.0).round() / 2.0;
    (a, (a + len).min(span))
}

/// A tiling of `[0, span)` with up to `max_segments` labeled segments.
fn random_tiling(rng: &mut ChaCha8Rng, span: u32, max_segments: usize) -> Vec<(f64, f64, String)> {
    let n = rng.random_range(1..=max_segments);
    let mut cuts: Vec<u32> = (0..n - 1).map(|_| rng.random_range(1..span)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(span);
    bounds
        .windows(2)
        .map(|w| {
            let label = ["a", "b", "c"][rng.random_range(0..3)].to_string();
            (w[0] as f64, w[1] as f64, label)
        })
        .collect()
}

fn labeled(segs: &[(f64, f64, String)]) -> LabeledSegmentation {
    LabeledSegmentation::new(
        segs.iter()
            .map(|s| LabeledInterval {
                start: s.0,
                end: s.1,
                label: s.2.clone(),
            })
            .collect(),
    )
    .unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// Compares grounding, action segmentation and highlight metrics with the
/// oracles on `n` random instances each. Returns the number of instances
/// where greedy F1 matching falls short of the exhaustive optimum.
pub fn check_all(n: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thresholds = [0.3, 0.5, 0.7];
    for case in 0..n {
        let q = rng.random_range(1..=10);
        let preds: Vec<(f64, f64)> = (0..q).map(|_| random_interval(&mut rng, 30.0)).collect();
        let gts: Vec<(f64, f64)> = (0..q).map(|_| random_interval(&mut rng, 30.0)).collect();
        let iv = |v: &[(f64, f64)]| {
            v.iter()
                .map(|&(a, b)| Interval::new(a, b).unwrap())
                .collect::<Vec<_>>()
        };
        let report =
            grounding_metrics(&iv(&preds), &iv(&gts), &thresholds).map_err(|e| e.to_string())?;
        let (recall, miou) = grounding(&preds, &gts, &thresholds);
        for (i, r) in report.recall_at.iter().enumerate() {
            if !close(r.value, recall[i]) {
                return Err(format!(
                    "grounding case {case}: R@{} {} vs {}",
                    r.threshold, r.value, recall[i]
                ));
            }
        }
        if !close(report.mean_iou, miou) {
            return Err(format!(
                "grounding case {case}: mIoU {} vs {miou}",
                report.mean_iou
            ));
        }
    }

    let overlaps = [0.1, 0.25, 0.5];
    let mut shortfalls = 0;
    for case in 0..n {
        let span = rng.random_range(6..=24);
        let gt = random_tiling(&mut rng, span, 6);
        let pred = random_tiling(&mut rng, span, 6);
        let fps = [1.0, 2.0, 3.0][rng.random_range(0..3)];
        let report = action_seg_metrics(&labeled(&pred), &labeled(&gt), &overlaps, Some(fps))
            .map_err(|e| e.to_string())?;
        let m = mof(&pred, &gt, fps);
        if !close(report.mof, m) {
            return Err(format!("action case {case}: MoF {} vs {m}", report.mof));
        }
        for (i, &k) in overlaps.iter().enumerate() {
            let greedy = greedy_tp(&pred, &gt, k);
            let want = f1_from(greedy, pred.len(), gt.len());
            if !close(report.f1_at[i].value, want) {
                return Err(format!(
                    "action case {case}: F1@{k} {} vs {want}",
                    report.f1_at[i].value
                ));
            }
            if exhaustive_tp(&pred, &gt, k) > greedy {
                shortfalls += 1;
            }
        }
    }

    let grid = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
    for case in 0..n {
        let n_queries = rng.random_range(1..=5);
        let mut queries = Vec::new();
        let mut raw = Vec::new();
        for qi in 0..n_queries {
            let n_gt = rng.random_range(1..=3);
            let n_pred = rng.random_range(1..=10);
            let gts: Vec<(f64, f64)> = (0..n_gt).map(|_| random_interval(&mut rng, 60.0)).collect();
            let preds: Vec<((f64, f64), f64)> = (0..n_pred)
                .map(|_| {
                    // Distinct scores keep the ranking unambiguous.
                    (random_interval(&mut rng, 60.0), rng.random::<f64>())
                })
                .collect();
            queries.push(HighlightQuery {
                query_id: format!("q{qi}"),
                preds: preds
                    .iter()
                    .map(|&((a, b), s)| ScoredMoment {
                        interval: Interval::new(a, b).unwrap(),
                        score: s,
                    })
                    .collect(),
                gts: gts
                    .iter()
                    .map(|&(a, b)| Interval::new(a, b).unwrap())
                    .collect(),
            });
            raw.push((preds, gts));
        }
        let report = highlight_metrics(&queries, &grid).map_err(|e| e.to_string())?;
        let map = raw
            .iter()
            .map(|(p, g)| {
                grid.iter()
                    .map(|&t| average_precision(p, g, t))
                    .sum::<f64>()
                    / grid.len() as f64
            })
            .sum::<f64>()
            / raw.len() as f64;
        let r1 = raw
            .iter()
            .filter(|(p, g)| {
                let top = p
                    .iter()
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                g.iter().any(|&gi| reaches(iou(top.0, gi), 0.5))
            })
            .count() as f64
            / raw.len() as f64;
        if !close(report.map, map) {
            return Err(format!(
                "highlight case {case}: mAP {} vs {map}",
                report.map
            ));
        }
        if !close(report.r1_at_05, r1) {
            return Err(format!(
                "highlight case {case}: R1@0.5 {} vs {r1}",
                report.r1_at_05
            ));
        }
    }
    Ok(shortfalls)
}
