//! Deterministic synthetic data: boundary-score cases for the segmenter and
//! complete per-video fixtures for the end-to-end pipeline.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{BBox, FrameRecord, LumaRef};
use crate::temporal_space::NormalizedTime;
use crate::tracking::{ClueKind, ClueRecord, RawDetection, RowRef, VideoMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryCaseParams {
    pub n_boundaries: usize,
    pub min_block: usize,
    pub max_block: usize,
    pub baseline: f64,
    pub noise_std: f64,
    pub spike: f64,
}

impl Default for BoundaryCaseParams {
    fn default() -> Self {
        BoundaryCaseParams {
            n_boundaries: 4,
            min_block: 15,
            max_block: 35,
            baseline: 0.05,
            noise_std: 0.02,
            spike: 0.6,
        }
    }
}

/// Frames with block-constant orthogonal features and the matching
/// boundary scores.
#[derive(Debug, Clone)]
pub struct BoundaryCase {
    pub frames: Vec<FrameRecord>,
    /// Score `i` sits between frame positions `i` and `i + 1`.
    pub scores: Vec<f64>,
    /// Position of the first frame of every block after the first.
    pub boundaries: Vec<usize>,
}

pub fn boundary_case(params: &BoundaryCaseParams, seed: u64) -> Result<BoundaryCase> {
    if params.min_block < 3 || params.max_block < params.min_block {
        return Err(Error::Input(format!(
            "block lengths {}..={} are invalid",
            params.min_block, params.max_block
        )));
    }
    let noise = Normal::new(0.0, params.noise_std)
        .map_err(|e| Error::Input(format!("noise std {}: {e}", params.noise_std)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_blocks = params.n_boundaries + 1;
    let lengths: Vec<usize> = (0..n_blocks)
        .map(|_| rng.random_range(params.min_block..=params.max_block))
        .collect();
    let total: usize = lengths.iter().sum();

    let mut boundaries = Vec::with_capacity(params.n_boundaries);
    let mut block_of = Vec::with_capacity(total);
    for (b, &len) in lengths.iter().enumerate() {
        if b > 0 {
            boundaries.push(block_of.len());
        }
        block_of.extend(std::iter::repeat_n(b, len));
    }

    let frames = block_of
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut feature = vec![0.0; n_blocks];
            feature[b] = 1.0;
            Ok(FrameRecord {
                index: i as u64,
                time: NormalizedTime::new(i as f64 / (total - 1) as f64)?,
                feature,
                luma: None,
                detections: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let scores = (0..total - 1)
        .map(|i| {
            let base = params.baseline + noise.sample(&mut rng);
            let spike = if boundaries.contains(&(i + 1)) {
                params.spike
            } else {
                0.0
            };
            (base + spike).clamp(0.0, 1.0)
        })
        .collect();
    Ok(BoundaryCase {
        frames,
        scores,
        boundaries,
    })
}

/// Fixture layout: `<dir>/manifest.json` lists video ids; each video gets
/// `<dir>/<id>/{video.json, frames.jsonl, luma.bin, detections.jsonl,
/// clues.jsonl}` plus `truth.json` with the intended event frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub videos: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTruth {
    /// Inclusive `[first, last]` frame index per event.
    pub events: Vec<[u64; 2]>,
    /// Frame index of the single-frame lighting flash.
    pub flash_frame: u64,
    pub tracks: Vec<TrackTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTruth {
    pub track_id: u32,
    pub class_label: String,
    pub first_frame: u64,
    pub last_frame: u64,
}

const LUMA_SIDE: usize = 8;
const FEATURE_DIM: usize = 8;
/// Roi features are a unit appearance vector in the first `ROI_BASE` slots
/// plus `ROI_BLOCK_WEIGHT` in one slot per block, so an object's roi cosine
/// across a cut is `1 / (1 + w^2)`: above the tracker gate, below merging.
const ROI_BASE: usize = 3;
const ROI_BLOCK_WEIGHT: f64 = 0.8;
const MAX_BLOCKS: usize = 4;

const SCENES: [&str; 6] = [
    "a kitchen",
    "a city park",
    "a beach",
    "a garage",
    "a classroom",
    "a forest trail",
];
const VIDEO_ACTIONS: [&str; 6] = [
    "people gather and talk",
    "the camera pans across the area",
    "someone carries a box",
    "a crowd walks past",
    "lights flicker on",
    "rain starts to fall",
];
const CLASSES: [(&str, [&str; 3]); 3] = [
    (
        "person",
        ["walks to the left", "waves at the camera", "sits down"],
    ),
    (
        "dog",
        ["runs in circles", "chases a ball", "lies on the ground"],
    ),
    (
        "bicycle",
        [
            "leans against a wall",
            "rolls across the frame",
            "is ridden slowly",
        ],
    ),
];

struct PlannedObject {
    class: usize,
    first_block: usize,
    last_block: usize,
    roi: Vec<f64>,
    origin: (f64, f64),
}

/// Writes `n_videos` fixtures under `dir`.
pub fn write_fixture(dir: &Path, n_videos: usize, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest { videos: Vec::new() };
    for v in 0..n_videos {
        let video_id = format!("vid{v:03}");
        let video_dir = dir.join(&video_id);
        fs::create_dir_all(&video_dir).map_err(|e| Error::io(&video_dir, e))?;
        write_video(&video_dir, &video_id, seed.wrapping_add(v as u64 * 7919))?;
        manifest.videos.push(video_id);
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn write_video(dir: &Path, video_id: &str, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_blocks = rng.random_range(3..=MAX_BLOCKS);
    let lengths: Vec<usize> = (0..n_blocks).map(|_| rng.random_range(14..=22)).collect();
    let total: usize = lengths.iter().sum();
    let duration = round4(total as f64 * 0.5);
    let starts: Vec<usize> = lengths
        .iter()
        .scan(0, |acc, &len| {
            let s = *acc;
            *acc += len;
            Some(s)
        })
        .collect();
    let block_of = |frame: usize| {
        starts
            .iter()
            .rposition(|&s| s <= frame)
            .expect("frame 0 is in block 0")
    };

    // One object lives through block 0 and the flash; others appear in
    // random block ranges. Objects of the same class never overlap in time.
    let flash_block = 0;
    let flash_frame = (starts[flash_block] + lengths[flash_block] / 2) as u64;
    let mut objects = vec![PlannedObject {
        class: 0,
        first_block: 0,
        last_block: 0,
        roi: random_roi(&mut rng),
        origin: (0.1, 0.2),
    }];
    for class in 1..CLASSES.len() {
        let first = rng.random_range(0..n_blocks);
        let last = rng.random_range(first..n_blocks);
        objects.push(PlannedObject {
            class,
            first_block: first,
            last_block: last,
            roi: random_roi(&mut rng),
            origin: (0.15 + 0.25 * class as f64, 0.5),
        });
    }
    // A second person spans every later block, so each video has a track
    // with captions in at least two events.
    if n_blocks > 2 {
        objects.push(PlannedObject {
            class: 0,
            first_block: 1,
            last_block: n_blocks - 1,
            roi: random_roi(&mut rng),
            origin: (0.6, 0.1),
        });
    }

    let block_light: Vec<u8> = (0..n_blocks).map(|b| [30u8, 220, 40, 230][b % 4]).collect();
    let mut luma = Vec::with_capacity(total * LUMA_SIDE * LUMA_SIDE);
    let mut frame_lines = Vec::with_capacity(total);
    let mut detections = Vec::new();
    let block_features: Vec<Vec<f64>> = (0..n_blocks)
        .map(|b| {
            (0..FEATURE_DIM)
                .map(|j| if j % n_blocks == b { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();

    for f in 0..total {
        let b = block_of(f);
        let flash = f as u64 == flash_frame;
        for _ in 0..LUMA_SIDE * LUMA_SIDE {
            let jitter: i16 = rng.random_range(-2..=2);
            let level = block_light[b] as i16 + jitter + if flash { 90 } else { 0 };
            luma.push(level.clamp(0, 255) as u8);
        }
        let feature: Vec<f64> = block_features[b]
            .iter()
            .map(|&v| round4(v + 0.01 * rng.random::<f64>()))
            .collect();
        frame_lines.push(serde_json::json!({
            "index": f,
            "time": round_time(f, total),
            "feature": feature,
            "luma": LumaRef {
                path: "luma.bin".into(),
                shape: [LUMA_SIDE, LUMA_SIDE],
                offset: (f * LUMA_SIDE * LUMA_SIDE) as u64,
            },
        }));

        for obj in &objects {
            if b < obj.first_block || b > obj.last_block {
                continue;
            }
            let local = (f - starts[obj.first_block]) as f64;
            let x = (obj.origin.0 + 0.004 * local).min(0.75);
            let y = obj.origin.1;
            let mut roi = obj.roi.clone();
            roi.extend((0..MAX_BLOCKS).map(|slot| if slot == b { ROI_BLOCK_WEIGHT } else { 0.0 }));
            let roi: Vec<f64> = roi
                .iter()
                .map(|&v| round4(v + 0.01 * (rng.random::<f64>() - 0.5)))
                .collect();
            detections.push(RawDetection {
                frame_index: f as u64,
                class_label: CLASSES[obj.class].0.to_string(),
                bbox: BBox::new(round4(x), y, round4(x + 0.2), y + 0.25)?,
                roi_feature: roi,
            });
        }
    }

    // Track ids follow creation order: first frame, then emission order.
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by_key(|&o| (starts[objects[o].first_block], o));
    let mut tracks = Vec::new();
    let mut clues = Vec::new();
    for (id, &o) in order.iter().enumerate() {
        let obj = &objects[o];
        let (class, actions) = CLASSES[obj.class];
        tracks.push(TrackTruth {
            track_id: id as u32,
            class_label: class.to_string(),
            first_frame: starts[obj.first_block] as u64,
            last_frame: (starts[obj.last_block] + lengths[obj.last_block] - 1) as u64,
        });
        for b in obj.first_block..=obj.last_block {
            let action = actions[(b + id) % actions.len()];
            clues.push(ClueRecord {
                row: RowRef::Track(id as u32),
                event_index: b,
                kind: ClueKind::Action,
                text: format!("{class} {action}"),
            });
            clues.push(ClueRecord {
                row: RowRef::Track(id as u32),
                event_index: b,
                kind: ClueKind::Caption,
                text: format!("the {class} {action}"),
            });
        }
    }
    let scene_offset = rng.random_range(0..SCENES.len());
    for b in 0..n_blocks {
        let scene = SCENES[(scene_offset + b) % SCENES.len()];
        let action = VIDEO_ACTIONS[(scene_offset + 2 * b) % VIDEO_ACTIONS.len()];
        clues.push(ClueRecord {
            row: RowRef::Video,
            event_index: b,
            kind: ClueKind::Scene,
            text: scene.to_string(),
        });
        clues.push(ClueRecord {
            row: RowRef::Video,
            event_index: b,
            kind: ClueKind::Caption,
            text: format!("in {scene}, {action}"),
        });
    }

    let truth = VideoTruth {
        events: (0..n_blocks)
            .map(|b| [starts[b] as u64, (starts[b] + lengths[b] - 1) as u64])
            .collect(),
        flash_frame,
        tracks,
    };

    write_json(
        &dir.join("video.json"),
        &VideoMeta {
            video_id: video_id.to_string(),
            duration,
        },
    )?;
    write_jsonl(&dir.join("frames.jsonl"), &frame_lines)?;
    let luma_path = dir.join("luma.bin");
    fs::File::create(&luma_path)
        .and_then(|mut f| f.write_all(&luma))
        .map_err(|e| Error::io(&luma_path, e))?;
    write_jsonl(&dir.join("detections.jsonl"), &detections)?;
    write_jsonl(&dir.join("clues.jsonl"), &clues)?;
    write_json(&dir.join("truth.json"), &truth)?;
    Ok(())
}

fn round_time(f: usize, total: usize) -> f64 {
    f as f64 / (total - 1) as f64
}

fn random_roi(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..ROI_BASE).map(|_| rng.random_range(0.2..1.0)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| v / norm).collect()
}
