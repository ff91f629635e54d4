//! The `momentkit` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for I/O
//! errors. Failures are reported on stderr as one JSON object per line.

pub mod config;
pub mod output;
pub mod pipeline;

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use momentkit::Error;

use crate::config::ClientKind;

#[derive(Debug, Parser)]
#[command(name = "momentkit", version, about = "Video moment data tooling")]
pub struct Cli {
    /// JSON configuration; command-line flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a video's frames into events.
    Segment(SegmentArgs),
    /// Link per-frame detections into instance tracks.
    Track(TrackArgs),
    /// Build the instance-event matrix and attach clues.
    Matrix(MatrixArgs),
    /// Generate instruction records from a matrix.
    Gen(GenArgs),
    /// Render or parse event-sequence text.
    #[command(subcommand)]
    Seq(SeqCommand),
    /// Create a seeded temporal token space file.
    InitSpace(InitSpaceArgs),
    /// Print the embedding of one normalized time.
    EncodeTime(EncodeTimeArgs),
    /// Print the normalized time nearest to an embedding.
    DecodeTime(DecodeTimeArgs),
    /// Train anchors with and without propagation and compare continuity.
    Continuity(ContinuityArgs),
    /// Evaluate predictions against ground truth.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Check anchor gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic multi-video fixture.
    Synth(SynthArgs),
    /// Run track, segment, matrix and gen over every video of a fixture.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub frames: PathBuf,
    /// Tracks whose observations feed the instance term of consistency.
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// JSON array of boundary scores used instead of luma differences.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Adaptive split threshold: mean + C * std of smoothed scores.
    #[arg(long, conflicts_with = "split_fixed")]
    pub split_c: Option<f64>,
    #[arg(long)]
    pub split_fixed: Option<f64>,
    #[arg(long)]
    pub merge_threshold: Option<f64>,
    #[arg(long)]
    pub min_event_frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iou_min: Option<f64>,
    #[arg(long)]
    pub feature_cos_min: Option<f64>,
    #[arg(long)]
    pub max_gap_frames: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    /// `{video_id, duration}` JSON.
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub clues: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write failure entries; defaults to `<out>.failures.jsonl`.
    #[arg(long)]
    pub failures: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated `task=count` pairs, e.g. `segment_qa=3,instance_qa=2`.
    #[arg(long)]
    pub plan: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long, value_enum)]
    pub client: Option<ClientKind>,
    #[arg(long)]
    pub mock_replies: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SeqCommand {
    /// Write captioned events as a headed event-sequence document.
    Render(SeqRenderArgs),
    /// Read an event-sequence document back into JSONL events.
    Parse(SeqParseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SeqFormat {
    Token,
    Seconds,
}

#[derive(Debug, Args)]
pub struct SeqRenderArgs {
    /// Events JSONL; every event needs a caption.
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    pub events: Option<PathBuf>,
    /// Use the video-row captions of a matrix instead.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "token")]
    pub format: SeqFormat,
    /// Video length in seconds; defaults to the matrix duration.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeqParseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitSpaceArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeTimeArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub tau: f64,
    /// Expected anchor count; a mismatch with the space file is an error.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecodeTimeArgs {
    #[arg(long)]
    pub space: PathBuf,
    /// JSON array of floats.
    #[arg(long)]
    pub embedding: String,
}

#[derive(Debug, Args)]
pub struct ContinuityArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// R@t and mIoU from `{query_id, start, end}` JSONL files.
    Grounding(GroundingArgs),
    /// MoF and segmental F1 from `{video_id?, start, end, label}` JSONL files.
    Actionseg(ActionSegArgs),
    /// mAP and R1@0.5 from scored `{query_id, start, end, score}` predictions.
    Highlight(HighlightArgs),
}

#[derive(Debug, Args)]
pub struct GroundingArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ActionSegArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub overlaps: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HighlightArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub videos: usize,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Fixture directory containing `manifest.json`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Range(_) => "range",
        Error::Shape(_) => "shape",
        Error::Index(_) => "index",
        Error::Input(_) => "input",
        Error::Validation(_) => "validation",
        Error::Degenerate(_) => "degenerate",
        Error::Normalization(_) => "normalization",
        Error::Diverged { .. } => "diverged",
        Error::Parse { .. } => "parse",
        Error::Template { .. } => "template",
        Error::Reference(_) => "reference",
        Error::Client { .. } => "client",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        2
    } else {
        1
    }
}

fn report(stderr: &mut dyn Write, kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    let _ = writeln!(stderr, "{line}");
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let _ = write!(stderr, "{}", e.render());
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid usage");
            report(stderr, "usage", first.trim_start_matches("error: "));
            return 1;
        }
    };
    match commands::dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(err) => {
            report(stderr, error_kind(&err), &err.to_string());
            exit_code(&err)
        }
    }
}
