//! Subcommand handlers. Each applies its flags over the loaded config, then
//! writes outputs through [`Run`] so every file gets a provenance sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use momentkit::event_sequence::{
    parse_document, render_document, CaptionedEvent, EventSequence, TimeFormat,
};
use momentkit::gradcheck::run_suite;
use momentkit::instruct::{Plan, TaskKind};
use momentkit::metrics::{
    action_seg_from_records, grounding_from_records, highlight_metrics,
    highlight_queries_from_records, load_moments, load_segments,
};
use momentkit::segmentation::{load_frames, segment_video, Event, SplitThreshold};
use momentkit::synth::write_fixture;
use momentkit::tracking::{
    attach_clues, build_matrix, link_tracks, load_clues, load_detections, InstanceEventMatrix,
    InstanceTrack, VideoMeta,
};
use momentkit::trainer::{continuity_experiment, ContinuityArm};
use momentkit::{Error, NormalizedTime, Result, TemporalTokenSpace};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::output::{json_text, jsonl_text, read_json, read_text, Run};
use crate::pipeline::{build_client, generate, matrix_sequence, run_pipeline, segment_with_tracks};
use crate::{
    ActionSegArgs, Cli, Command, ContinuityArgs, DecodeTimeArgs, EncodeTimeArgs, GenArgs,
    GradcheckArgs, GroundingArgs, HighlightArgs, InitSpaceArgs, MatrixArgs, MetricsCommand,
    PipelineArgs, SegmentArgs, SeqCommand, SeqFormat, SeqParseArgs, SeqRenderArgs, SynthArgs,
    TrackArgs,
};

pub(crate) fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Segment(a) => segment(a, &mut config),
        Command::Track(a) => track(a, &mut config),
        Command::Matrix(a) => matrix(a, &config),
        Command::Gen(a) => gen(a, &mut config),
        Command::Seq(SeqCommand::Render(a)) => seq_render(a, &config),
        Command::Seq(SeqCommand::Parse(a)) => seq_parse(a, &config),
        Command::InitSpace(a) => init_space(a, &mut config),
        Command::EncodeTime(a) => encode_time(a, stdout),
        Command::DecodeTime(a) => decode_time(a, stdout),
        Command::Continuity(a) => continuity(a, &mut config, stdout),
        Command::Metrics(m) => metrics(m, &mut config, stdout),
        Command::Gradcheck(a) => gradcheck(a, &mut config, stdout),
        Command::Synth(a) => synth(a, &config, stdout),
        Command::Pipeline(a) => pipeline(a, &config, stdout),
    }
}

fn print_json<T: Serialize>(stdout: &mut dyn Write, value: &T) -> Result<()> {
    let text = json_text(value)?;
    stdout.write_all(text.as_bytes()).map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn load_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

fn segment(a: SegmentArgs, config: &mut PipelineConfig) -> Result<()> {
    let seg = &mut config.segment;
    if let Some(s) = a.sigma {
        seg.sigma = s;
    }
    if let Some(c) = a.split_c {
        seg.split_threshold = SplitThreshold::Adaptive { c };
    }
    if let Some(value) = a.split_fixed {
        seg.split_threshold = SplitThreshold::Fixed { value };
    }
    if let Some(m) = a.merge_threshold {
        seg.merge_threshold = m;
    }
    if let Some(n) = a.min_event_frames {
        seg.min_event_frames = n;
    }
    let mut run = Run::new("segment", config, None);
    run.input(&a.frames)?;
    let tracks: Vec<InstanceTrack> = match &a.tracks {
        Some(path) => {
            run.input(path)?;
            load_jsonl(path)?
        }
        None => Vec::new(),
    };
    let events: Vec<Event> = match &a.scores {
        Some(path) => {
            run.input(path)?;
            let scores: Vec<f64> = read_json(path)?;
            let mut frames = load_frames(&a.frames)?;
            momentkit::segmentation::attach_detections(&mut frames, &tracks);
            segment_video(&frames, &config.segment, Some(&scores))?
        }
        None => segment_with_tracks(&a.frames, &tracks, config)?,
    };
    run.emit(&a.out, jsonl_text(&events)?.as_bytes())
}

fn track(a: TrackArgs, config: &mut PipelineConfig) -> Result<()> {
    let p = &mut config.tracker;
    if let Some(v) = a.iou_min {
        p.iou_min = v;
    }
    if let Some(v) = a.feature_cos_min {
        p.feature_cos_min = v;
    }
    if let Some(v) = a.max_gap_frames {
        p.max_gap_frames = v;
    }
    let mut run = Run::new("track", config, None);
    run.input(&a.detections)?;
    let tracks = link_tracks(&load_detections(&a.detections)?, &config.tracker)?;
    run.emit(&a.out, jsonl_text(&tracks)?.as_bytes())
}

fn matrix(a: MatrixArgs, config: &PipelineConfig) -> Result<()> {
    let mut run = Run::new("matrix", config, None);
    for path in [&a.video, &a.tracks, &a.events] {
        run.input(path)?;
    }
    let meta: VideoMeta = read_json(&a.video)?;
    let tracks: Vec<InstanceTrack> = load_jsonl(&a.tracks)?;
    let events: Vec<Event> = load_jsonl(&a.events)?;
    let mut matrix = build_matrix(&meta, &tracks, &events)?;
    if let Some(path) = &a.clues {
        run.input(path)?;
        matrix = attach_clues(&matrix, &load_clues(path)?)?;
    }
    run.emit(&a.out, json_text(&matrix)?.as_bytes())
}

/// Parses `task=count,task=count`.
pub fn parse_plan(text: &str) -> Result<Plan> {
    let mut plan = Plan::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (task, count) = item
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("plan entry {item:?} is not task=count")))?;
        let task: TaskKind = task.trim().parse()?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("plan entry {item:?} has a bad count")))?;
        if plan.insert(task, count).is_some() {
            return Err(Error::Input(format!("plan names {task} twice")));
        }
    }
    Ok(plan)
}

fn gen(a: GenArgs, config: &mut PipelineConfig) -> Result<()> {
    let g = &mut config.generation;
    if let Some(seed) = a.seed {
        g.seed = seed;
    }
    if let Some(plan) = &a.plan {
        g.plan = parse_plan(plan)?;
    }
    if let Some(n) = a.max_in_flight {
        g.max_in_flight = n;
    }
    if let Some(kind) = a.client {
        config.llm.client = kind;
    }
    if let Some(path) = a.mock_replies {
        config.llm.mock_replies = Some(path);
    }
    let mut run = Run::new("gen", config, Some(config.generation.seed));
    run.input(&a.matrix)?;
    if let Some(path) = &config.llm.mock_replies {
        run.input(path)?;
    }
    let matrix: InstanceEventMatrix = read_json(&a.matrix)?;
    let client = build_client(config)?;
    let output = generate(&matrix, client.as_ref(), config)?;
    let failures = a.failures.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().unwrap_or_default().to_os_string();
        name.push(".failures.jsonl");
        a.out.with_file_name(name)
    });
    run.emit(&a.out, jsonl_text(&output.records)?.as_bytes())?;
    run.emit(&failures, jsonl_text(&output.failures)?.as_bytes())
}

fn seq_render(a: SeqRenderArgs, config: &PipelineConfig) -> Result<()> {
    let mut run = Run::new("seq render", config, None);
    let (seq, matrix_duration) = match (&a.events, &a.matrix) {
        (Some(path), _) => {
            run.input(path)?;
            let events: Vec<CaptionedEvent> = load_jsonl(path)?;
            (EventSequence::new(events)?, None)
        }
        (None, Some(path)) => {
            run.input(path)?;
            let matrix: InstanceEventMatrix = read_json(path)?;
            (matrix_sequence(&matrix)?, Some(matrix.duration))
        }
        (None, None) => return Err(Error::Input("pass --events or --matrix".into())),
    };
    let format = match a.format {
        SeqFormat::Token => TimeFormat::Token,
        SeqFormat::Seconds => TimeFormat::Seconds {
            duration: a
                .duration
                .or(matrix_duration)
                .ok_or_else(|| Error::Input("seconds format needs --duration".into()))?,
        },
    };
    run.emit(&a.out, render_document(&seq, format)?.as_bytes())
}

fn seq_parse(a: SeqParseArgs, config: &PipelineConfig) -> Result<()> {
    let mut run = Run::new("seq parse", config, None);
    run.input(&a.input)?;
    let (_, seq) = parse_document(&read_text(&a.input)?)?;
    run.emit(&a.out, jsonl_text(seq.events())?.as_bytes())
}

fn init_space(a: InitSpaceArgs, config: &mut PipelineConfig) -> Result<()> {
    let s = &mut config.space;
    if let Some(n) = a.n {
        s.n_anchors = n;
    }
    if let Some(d) = a.dim {
        s.dim = d;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    let space = TemporalTokenSpace::new(s.n_anchors, s.dim, s.seed)?;
    let mut bytes = Vec::new();
    space.write_to(&mut bytes)?;
    Run::new("init-space", config, Some(config.space.seed)).emit(&a.out, &bytes)
}

fn encode_time(a: EncodeTimeArgs, stdout: &mut dyn Write) -> Result<()> {
    let space = TemporalTokenSpace::load(&a.space)?;
    if let Some(n) = a.n {
        if n != space.n_anchors() {
            return Err(Error::Shape(format!(
                "space has {} anchors, expected {n}",
                space.n_anchors()
            )));
        }
    }
    let v = space.encode_time(NormalizedTime::new(a.tau)?);
    print_json(stdout, &v.to_vec())
}

fn decode_time(a: DecodeTimeArgs, stdout: &mut dyn Write) -> Result<()> {
    let space = TemporalTokenSpace::load(&a.space)?;
    let v: Vec<f64> = serde_json::from_str(&a.embedding)
        .map_err(|e| Error::Input(format!("--embedding is not a JSON array of numbers: {e}")))?;
    let decoded = space.decode_time(ndarray::ArrayView1::from(&v[..]))?;
    print_json(stdout, &decoded)
}

#[derive(Serialize)]
struct ArmSummary {
    propagation: momentkit::Propagation,
    cosine_gap: f64,
    report: momentkit::trainer::ContinuityReport,
    final_loss: Option<f64>,
    loss_curve: Vec<f64>,
}

impl ArmSummary {
    fn new(arm: &ContinuityArm) -> Self {
        ArmSummary {
            propagation: arm.propagation,
            cosine_gap: arm.report.cosine_gap(),
            report: arm.report,
            final_loss: arm.loss_curve.last().copied(),
            loss_curve: arm.loss_curve.clone(),
        }
    }
}

#[derive(Serialize)]
struct ContinuitySummary {
    settings: momentkit::trainer::ContinuitySettings,
    with_ntp: ArmSummary,
    without_ntp: ArmSummary,
    /// Propagation widens the adjacent-vs-random cosine gap.
    gap_improved: bool,
}

fn continuity(
    a: ContinuityArgs,
    config: &mut PipelineConfig,
    stdout: &mut dyn Write,
) -> Result<()> {
    let c = &mut config.continuity;
    if let Some(v) = a.n {
        c.n_anchors = v;
    }
    if let Some(v) = a.dim {
        c.dim = v;
    }
    if let Some(v) = a.stride {
        c.stride = v;
    }
    if let Some(v) = a.steps {
        c.steps = v;
    }
    if let Some(v) = a.lr {
        c.learning_rate = v;
    }
    if let Some(v) = a.seed {
        c.rng_seed = v;
    }
    let outcome = continuity_experiment(&config.continuity.train_config()?)?;
    let run = Run::new("continuity", config, Some(config.continuity.rng_seed));
    run.emit(
        &a.out_dir.join("pca_ntp.csv"),
        outcome.with_ntp.pca_csv().as_bytes(),
    )?;
    run.emit(
        &a.out_dir.join("pca_plain.csv"),
        outcome.without_ntp.pca_csv().as_bytes(),
    )?;
    let summary = ContinuitySummary {
        settings: config.continuity.clone(),
        with_ntp: ArmSummary::new(&outcome.with_ntp),
        without_ntp: ArmSummary::new(&outcome.without_ntp),
        gap_improved: outcome.with_ntp.report.cosine_gap()
            > outcome.without_ntp.report.cosine_gap(),
    };
    run.emit(
        &a.out_dir.join("report.json"),
        json_text(&summary)?.as_bytes(),
    )?;
    print_json(
        stdout,
        &serde_json::json!({
            "with_ntp": summary.with_ntp.report,
            "without_ntp": summary.without_ntp.report,
            "gap_improved": summary.gap_improved,
        }),
    )
}

fn emit_report<T: Serialize>(
    command: &str,
    config: &PipelineConfig,
    inputs: [&Path; 2],
    out: Option<&Path>,
    report: &T,
    stdout: &mut dyn Write,
) -> Result<()> {
    if let Some(out) = out {
        let mut run = Run::new(command, config, None);
        for path in inputs {
            run.input(path)?;
        }
        run.emit(out, json_text(report)?.as_bytes())?;
    }
    print_json(stdout, report)
}

fn metrics(m: MetricsCommand, config: &mut PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    match m {
        MetricsCommand::Grounding(GroundingArgs {
            pred,
            gt,
            thresholds,
            out,
        }) => {
            if let Some(t) = thresholds {
                config.metrics.grounding_thresholds = t;
            }
            let report = grounding_from_records(
                &load_moments(&pred)?,
                &load_moments(&gt)?,
                &config.metrics.grounding_thresholds,
            )?;
            emit_report(
                "metrics grounding",
                config,
                [&pred, &gt],
                out.as_deref(),
                &report,
                stdout,
            )
        }
        MetricsCommand::Actionseg(ActionSegArgs {
            pred,
            gt,
            fps,
            overlaps,
            out,
        }) => {
            if let Some(f) = fps {
                config.metrics.fps = f;
            }
            if let Some(o) = overlaps {
                config.metrics.f1_overlaps = o;
            }
            let report = action_seg_from_records(
                &load_segments(&pred)?,
                &load_segments(&gt)?,
                &config.metrics.f1_overlaps,
                config.metrics.fps,
            )?;
            emit_report(
                "metrics actionseg",
                config,
                [&pred, &gt],
                out.as_deref(),
                &report,
                stdout,
            )
        }
        MetricsCommand::Highlight(HighlightArgs { pred, gt, out }) => {
            let queries =
                highlight_queries_from_records(&load_moments(&pred)?, &load_moments(&gt)?)?;
            let report = highlight_metrics(&queries, &config.metrics.iou_grid)?;
            emit_report(
                "metrics highlight",
                config,
                [&pred, &gt],
                out.as_deref(),
                &report,
                stdout,
            )
        }
    }
}

#[derive(Serialize)]
struct GradcheckSummary {
    cases: usize,
    seed: u64,
    tolerance: f64,
    max_relative_error: f64,
    passed: bool,
}

fn gradcheck(a: GradcheckArgs, config: &mut PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    let g = &mut config.gradcheck;
    if let Some(v) = a.cases {
        g.cases = v;
    }
    if let Some(v) = a.seed {
        g.seed = v;
    }
    if let Some(v) = a.tolerance {
        g.tolerance = v;
    }
    let report = run_suite(g.cases, g.seed, g.tolerance)?;
    if let Some(out) = &a.out {
        Run::new("gradcheck", config, Some(report.seed))
            .emit(out, json_text(&report)?.as_bytes())?;
    }
    print_json(
        stdout,
        &GradcheckSummary {
            cases: report.cases.len(),
            seed: report.seed,
            tolerance: report.tolerance,
            max_relative_error: report.max_relative_error,
            passed: report.passed,
        },
    )?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "max relative error {:e} exceeds tolerance {:e}",
            report.max_relative_error, report.tolerance
        )))
    }
}

fn synth(a: SynthArgs, config: &PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    let manifest = write_fixture(&a.out, a.videos, a.seed)?;
    Run::new("synth", config, Some(a.seed)).emit(
        &a.out.join("manifest.json"),
        json_text(&manifest)?.as_bytes(),
    )?;
    print_json(stdout, &manifest)
}

fn pipeline(a: PipelineArgs, config: &PipelineConfig, stdout: &mut dyn Write) -> Result<()> {
    let videos = run_pipeline(&a.input, &a.out, config, a.jobs)?;
    print_json(stdout, &serde_json::json!({ "videos": videos }))
}
