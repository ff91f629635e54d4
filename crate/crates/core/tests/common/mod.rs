#![allow(dead_code)]

pub mod oracles;

use std::path::Path;

use momentkit::segmentation::{attach_detections, load_frames, segment_video, SegmentConfig};
use momentkit::synth::write_fixture;
use momentkit::tracking::{
    attach_clues, build_matrix, link_tracks, load_clues, load_detections, InstanceEventMatrix,
    LinkParams, VideoMeta,
};

/// Runs the fixture through tracking, segmentation and clue attachment.
pub fn fixture_matrices(dir: &Path, n_videos: usize, seed: u64) -> Vec<InstanceEventMatrix> {
    let manifest = write_fixture(dir, n_videos, seed).unwrap();
    manifest
        .videos
        .iter()
        .map(|id| {
            let vdir = dir.join(id);
            let meta: VideoMeta =
                serde_json::from_str(&std::fs::read_to_string(vdir.join("video.json")).unwrap())
                    .unwrap();
            let tracks = link_tracks(
                &load_detections(&vdir.join("detections.jsonl")).unwrap(),
                &LinkParams::default(),
            )
            .unwrap();
            let mut frames = load_frames(&vdir.join("frames.jsonl")).unwrap();
            attach_detections(&mut frames, &tracks);
            let events = segment_video(&frames, &SegmentConfig::default(), None).unwrap();
            let matrix = build_matrix(&meta, &tracks, &events).unwrap();
            attach_clues(&matrix, &load_clues(&vdir.join("clues.jsonl")).unwrap()).unwrap()
        })
        .collect()
}

/// Compares `actual` with the checked-in file, or rewrites it when
/// `UPDATE_GOLDEN` is set.
pub fn check_golden(path: &Path, actual: &str) {
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(path).unwrap_or_else(|e| {
        panic!(
            "{}: {e}; run with UPDATE_GOLDEN=1 to create it",
            path.display()
        )
    });
    assert!(
        expected == actual,
        "{} differs from the generated output",
        path.display()
    );
}
