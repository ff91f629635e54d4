//! Per-video stages shared by the single-step subcommands and `pipeline`.

use std::collections::BTreeMap;
use std::path::Path;

use momentkit::event_sequence::{render_document, CaptionedEvent, EventSequence, TimeFormat};
use momentkit::instruct::{
    generate_instructions, GenerateOptions, GenerationOutput, HttpClient, LlmClient, MockClient,
};
use momentkit::segmentation::{attach_detections, load_frames, segment_video, Event};
use momentkit::synth::Manifest;
use momentkit::tracking::{
    attach_clues, build_matrix, link_tracks, load_clues, load_detections, InstanceEventMatrix,
    InstanceTrack, RowRef, VideoMeta,
};
use momentkit::{Error, Result};
use rayon::prelude::*;

use crate::config::{ClientKind, PipelineConfig};
use crate::output::{json_text, jsonl_text, read_json, Run};

pub fn build_client(config: &PipelineConfig) -> Result<Box<dyn LlmClient>> {
    match config.llm.client {
        ClientKind::Mock => {
            let replies: BTreeMap<String, String> = match &config.llm.mock_replies {
                Some(path) => read_json(path)?,
                None => BTreeMap::new(),
            };
            Ok(Box::new(MockClient::from_hashed(replies)))
        }
        ClientKind::Http => Ok(Box::new(HttpClient::new(config.llm.http.clone())?)),
    }
}

pub fn generate_options(config: &PipelineConfig) -> GenerateOptions {
    GenerateOptions {
        max_in_flight: config.generation.max_in_flight,
        extra_examples: config.generation.extra_examples.clone(),
    }
}

pub fn generate(
    matrix: &InstanceEventMatrix,
    client: &dyn LlmClient,
    config: &PipelineConfig,
) -> Result<GenerationOutput> {
    generate_instructions(
        matrix,
        client,
        &config.generation.effective_plan(),
        config.generation.seed,
        &generate_options(config),
    )
}

/// Video-row captions as an event sequence; uncaptioned events are skipped.
pub fn matrix_sequence(matrix: &InstanceEventMatrix) -> Result<EventSequence> {
    let events = matrix
        .events
        .iter()
        .enumerate()
        .filter_map(|(j, e)| {
            let caption = matrix.cell(RowRef::Video, j)?.caption.clone()?;
            Some(CaptionedEvent {
                start: e.start_time,
                end: e.end_time,
                caption,
            })
        })
        .collect();
    EventSequence::new(events)
}

#[derive(Debug)]
pub struct VideoOutputs {
    pub video_id: String,
    pub instructions: String,
}

/// Runs track → segment → matrix → sequence → gen for one fixture video,
/// writing every stage's output under `out_dir`.
pub fn run_video(
    video_dir: &Path,
    out_dir: &Path,
    config: &PipelineConfig,
    client: &dyn LlmClient,
) -> Result<VideoOutputs> {
    let meta_path = video_dir.join("video.json");
    let det_path = video_dir.join("detections.jsonl");
    let frames_path = video_dir.join("frames.jsonl");
    let clues_path = video_dir.join("clues.jsonl");
    let meta: VideoMeta = read_json(&meta_path)?;

    let mut run = Run::new("track", config, None);
    run.input(&det_path)?;
    let tracks = link_tracks(&load_detections(&det_path)?, &config.tracker)?;
    run.emit(
        &out_dir.join("tracks.jsonl"),
        jsonl_text(&tracks)?.as_bytes(),
    )?;

    let mut run = Run::new("segment", config, None);
    run.input(&frames_path)?;
    run.input(&video_dir.join("luma.bin"))?;
    run.input(&out_dir.join("tracks.jsonl"))?;
    let events = segment_with_tracks(&frames_path, &tracks, config)?;
    run.emit(
        &out_dir.join("events.jsonl"),
        jsonl_text(&events)?.as_bytes(),
    )?;

    let mut run = Run::new("matrix", config, None);
    run.input(&meta_path)?;
    run.input(&out_dir.join("tracks.jsonl"))?;
    run.input(&out_dir.join("events.jsonl"))?;
    run.input(&clues_path)?;
    let matrix = attach_clues(
        &build_matrix(&meta, &tracks, &events)?,
        &load_clues(&clues_path)?,
    )?;
    run.emit(&out_dir.join("matrix.json"), json_text(&matrix)?.as_bytes())?;

    let mut run = Run::new("seq render", config, None);
    run.input(&out_dir.join("matrix.json"))?;
    let doc = render_document(
        &matrix_sequence(&matrix)?,
        TimeFormat::Seconds {
            duration: matrix.duration,
        },
    )?;
    run.emit(&out_dir.join("sequence.txt"), doc.as_bytes())?;

    let mut run = Run::new("gen", config, Some(config.generation.seed));
    run.input(&out_dir.join("matrix.json"))?;
    let generated = generate(&matrix, client, config)?;
    let instructions = jsonl_text(&generated.records)?;
    run.emit(&out_dir.join("instructions.jsonl"), instructions.as_bytes())?;
    run.emit(
        &out_dir.join("failures.jsonl"),
        jsonl_text(&generated.failures)?.as_bytes(),
    )?;

    Ok(VideoOutputs {
        video_id: meta.video_id,
        instructions,
    })
}

pub fn segment_with_tracks(
    frames_path: &Path,
    tracks: &[InstanceTrack],
    config: &PipelineConfig,
) -> Result<Vec<Event>> {
    let mut frames = load_frames(frames_path)?;
    attach_detections(&mut frames, tracks);
    segment_video(&frames, &config.segment, None)
}

/// Processes every manifest video on `jobs` threads. Output bytes do not
/// depend on `jobs`: each video writes its own directory and the combined
/// file follows manifest order.
pub fn run_pipeline(
    input: &Path,
    out: &Path,
    config: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<String>> {
    let manifest_path = input.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    let client = build_client(config)?;
    let client = client.as_ref();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Input(format!("cannot start {jobs} worker threads: {e}")))?;
    let results: Vec<Result<VideoOutputs>> = pool.install(|| {
        manifest
            .videos
            .par_iter()
            .map(|id| run_video(&input.join(id), &out.join(id), config, client))
            .collect()
    });
    let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut run = Run::new("pipeline", config, Some(config.generation.seed));
    run.input(&manifest_path)?;
    let mut combined = String::new();
    for o in &outputs {
        run.input_bytes(
            format!("{}/instructions.jsonl", o.video_id),
            o.instructions.as_bytes(),
        );
        combined.push_str(&o.instructions);
    }
    run.emit(&out.join("instructions.jsonl"), combined.as_bytes())?;
    Ok(outputs.into_iter().map(|o| o.video_id).collect())
}
