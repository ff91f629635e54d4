use momentkit::segmentation::{attach_detections, load_frames, segment_video, SegmentConfig};
use momentkit::synth::{write_fixture, VideoTruth};
use momentkit::tracking::{
    attach_clues, build_matrix, link_tracks, load_clues, load_detections, LinkParams, VideoMeta,
};

#[test]
fn fixture_videos_segment_and_track_as_planned() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_fixture(dir.path(), 6, 11).unwrap();
    assert_eq!(manifest.videos.len(), 6);
    for video in &manifest.videos {
        let vdir = dir.path().join(video);
        let truth: VideoTruth =
            serde_json::from_str(&std::fs::read_to_string(vdir.join("truth.json")).unwrap())
                .unwrap();
        let meta: VideoMeta =
            serde_json::from_str(&std::fs::read_to_string(vdir.join("video.json")).unwrap())
                .unwrap();

        let detections = load_detections(&vdir.join("detections.jsonl")).unwrap();
        let tracks = link_tracks(&detections, &LinkParams::default()).unwrap();
        let spans: Vec<(u32, &str, u64, u64)> = tracks
            .iter()
            .map(|t| {
                (
                    t.track_id,
                    t.class_label.as_str(),
                    t.first_frame,
                    t.last_frame,
                )
            })
            .collect();
        let expected: Vec<(u32, &str, u64, u64)> = truth
            .tracks
            .iter()
            .map(|t| {
                (
                    t.track_id,
                    t.class_label.as_str(),
                    t.first_frame,
                    t.last_frame,
                )
            })
            .collect();
        assert_eq!(spans, expected, "{video}: tracks");

        let mut frames = load_frames(&vdir.join("frames.jsonl")).unwrap();
        attach_detections(&mut frames, &tracks);
        let events = segment_video(&frames, &SegmentConfig::default(), None).unwrap();
        let got: Vec<[u64; 2]> = events
            .iter()
            .map(|e| [e.start_frame, e.end_frame])
            .collect();
        assert_eq!(got, truth.events, "{video}: events");

        let matrix = build_matrix(&meta, &tracks, &events).unwrap();
        let clues = load_clues(&vdir.join("clues.jsonl")).unwrap();
        let annotated = attach_clues(&matrix, &clues).unwrap();
        assert!(annotated
            .cells
            .iter()
            .filter(|c| c.present)
            .all(|c| c.caption.is_some()));
    }
}

#[test]
fn flash_is_split_then_merged() {
    use momentkit::segmentation::{find_split_points, frame_diff_scores, gaussian_smooth};

    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 1, 11).unwrap();
    let vdir = dir.path().join("vid000");
    let truth: VideoTruth =
        serde_json::from_str(&std::fs::read_to_string(vdir.join("truth.json")).unwrap()).unwrap();
    let frames = load_frames(&vdir.join("frames.jsonl")).unwrap();
    let config = SegmentConfig::default();
    let smoothed = gaussian_smooth(&frame_diff_scores(&frames).unwrap(), config.sigma).unwrap();
    let splits = find_split_points(&smoothed, config.split_threshold.resolve(&smoothed));
    // The flash yields a split of its own inside the first event.
    let flash = truth.flash_frame as usize;
    assert!(
        splits.iter().any(|&s| s + 1 >= flash - 1 && s <= flash),
        "{splits:?}"
    );
    assert_eq!(splits.len(), truth.events.len());
}
