use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::LlmClient;
use super::{fill_prompt, TaskKind, SOURCE_CLIP_MARKER};
use crate::error::{Error, Result};
use crate::event_sequence::seconds_span;
use crate::metrics::Interval;
use crate::tracking::{InstanceEventMatrix, RowRef};

pub const INSTRUCTION_RECORD_SCHEMA: &str =
    include_str!("../../schema/instruction_record.schema.json");

/// Requested record count per task, generated in task order.
pub type Plan = BTreeMap<TaskKind, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    fn user(text: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            text: text.into(),
        }
    }

    fn assistant(text: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRef {
    pub row: RowRef,
    pub column: usize,
}

/// One generated instruction. Grounding intervals are normalized times
/// copied from matrix events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub video_id: String,
    pub task: TaskKind,
    pub conversation: Vec<Turn>,
    pub grounding: Vec<Interval>,
    pub source_cells: Vec<CellRef>,
}

impl InstructionRecord {
    /// Roles alternate starting with the user, no turn is blank, and every
    /// grounding interval lies in [0, 1].
    pub fn validate(&self) -> Result<()> {
        if self.conversation.is_empty() {
            return Err(Error::Validation(format!(
                "record {} has no turns",
                self.id
            )));
        }
        for (i, turn) in self.conversation.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Role::User
            } else {
                Role::Assistant
            };
            if turn.role != expected {
                return Err(Error::Validation(format!(
                    "record {}: turn {i} is {:?}, expected {expected:?}",
                    self.id, turn.role
                )));
            }
            if turn.text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "record {}: turn {i} is blank",
                    self.id
                )));
            }
        }
        for g in &self.grounding {
            if !(0.0 <= g.start && g.start <= g.end && g.end <= 1.0) {
                return Err(Error::Validation(format!(
                    "record {}: grounding [{}, {}] is outside [0, 1]",
                    self.id, g.start, g.end
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Select,
    Client,
    Parse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub video_id: String,
    pub task: TaskKind,
    pub index: usize,
    pub stage: Stage,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub records: Vec<InstructionRecord>,
    pub failures: Vec<GenerationFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateOptions {
    pub max_in_flight: usize,
    /// Appended to the named task's template after a blank line.
    pub extra_examples: BTreeMap<TaskKind, String>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            max_in_flight: 4,
            extra_examples: BTreeMap::new(),
        }
    }
}

/// What a task instance is built from.
#[derive(Debug, Clone)]
struct Selection {
    cells: Vec<CellRef>,
    columns: Vec<usize>,
    instance_class: Option<String>,
    bindings: BTreeMap<String, String>,
}

struct Job {
    task: TaskKind,
    index: usize,
    selection: Selection,
    prompt: String,
}

fn video_seed(seed: u64, video_id: &str) -> u64 {
    let digest = Sha256::digest(video_id.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn bind(pairs: Vec<(&str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

struct View<'a> {
    m: &'a InstanceEventMatrix,
}

impl View<'_> {
    fn span(&self, column: usize) -> String {
        let e = &self.m.events[column];
        seconds_span(e.start_time, e.end_time, self.m.duration)
    }

    fn caption(&self, row: RowRef, column: usize) -> Option<&str> {
        self.m
            .cell(row, column)
            .filter(|c| c.present)
            .and_then(|c| c.caption.as_deref())
            .filter(|c| !c.trim().is_empty())
    }

    fn class_of(&self, row: RowRef) -> Option<&str> {
        match row {
            RowRef::Video => None,
            RowRef::Track(id) => self.m.track(id).map(|t| t.class_label.as_str()),
        }
    }

    /// Captioned columns of one row, as `(column, "span : caption")`.
    fn captioned_columns(&self, row: RowRef) -> Vec<(usize, String)> {
        (0..self.m.events.len())
            .filter_map(|j| {
                self.caption(row, j)
                    .map(|c| (j, format!("{} : {c}", self.span(j))))
            })
            .collect()
    }

    fn candidates(&self, task: TaskKind) -> Vec<Selection> {
        let n_events = self.m.events.len();
        let video_captions =
            || (0..n_events).filter_map(move |j| self.caption(RowRef::Video, j).map(|c| (j, c)));
        match task {
            TaskKind::SegmentCaptioning => (0..n_events)
                .filter_map(|j| {
                    let mut lines = Vec::new();
                    let mut cells = Vec::new();
                    for row in self.m.rows() {
                        let Some(cell) = self.m.cell(row, j).filter(|c| c.present) else {
                            continue;
                        };
                        let texts: Vec<&str> = cell
                            .caption
                            .iter()
                            .map(String::as_str)
                            .chain(cell.clues.iter().map(|c| c.text.as_str()))
                            .filter(|t| !t.trim().is_empty())
                            .collect();
                        if texts.is_empty() {
                            continue;
                        }
                        cells.push(CellRef { row, column: j });
                        lines.extend(texts.iter().map(|t| match self.class_of(row) {
                            Some(class) => format!("{class}: {t}"),
                            None => t.to_string(),
                        }));
                    }
                    (!lines.is_empty()).then(|| Selection {
                        cells,
                        columns: vec![j],
                        instance_class: None,
                        bindings: bind(vec![("descriptions", lines.join("\n"))]),
                    })
                })
                .collect(),
            TaskKind::SegmentQa => video_captions()
                .map(|(j, c)| Selection {
                    cells: vec![CellRef {
                        row: RowRef::Video,
                        column: j,
                    }],
                    columns: vec![j],
                    instance_class: None,
                    bindings: bind(vec![("segment_caption", c.to_string())]),
                })
                .collect(),
            TaskKind::DirectLocalization | TaskKind::InferentialLocalization => video_captions()
                .map(|(j, c)| Selection {
                    cells: vec![CellRef {
                        row: RowRef::Video,
                        column: j,
                    }],
                    columns: vec![j],
                    instance_class: None,
                    bindings: bind(vec![("content", c.to_string())]),
                })
                .collect(),
            TaskKind::InstanceQa => {
                let mut out = Vec::new();
                for track in &self.m.tracks {
                    let row = RowRef::Track(track.track_id);
                    for j in 0..n_events {
                        if let Some(c) = self.caption(row, j) {
                            out.push(Selection {
                                cells: vec![CellRef { row, column: j }],
                                columns: vec![j],
                                instance_class: Some(track.class_label.clone()),
                                bindings: bind(vec![
                                    ("instance_class", track.class_label.clone()),
                                    ("segment_caption", c.to_string()),
                                ]),
                            });
                        }
                    }
                }
                out
            }
            TaskKind::ComposedRetrieval => {
                let captioned: Vec<(usize, &str)> = video_captions().collect();
                let mut out = Vec::new();
                for &(i, source) in &captioned {
                    for &(j, target) in &captioned {
                        if i == j || source == target {
                            continue;
                        }
                        out.push(Selection {
                            cells: vec![
                                CellRef {
                                    row: RowRef::Video,
                                    column: i,
                                },
                                CellRef {
                                    row: RowRef::Video,
                                    column: j,
                                },
                            ],
                            columns: vec![i, j],
                            instance_class: None,
                            bindings: bind(vec![
                                ("source_clip_content", source.to_string()),
                                ("target_clip_content", target.to_string()),
                            ]),
                        });
                    }
                }
                out
            }
            TaskKind::InstanceActivitySummarizing | TaskKind::CrossSegmentQa => self
                .m
                .tracks
                .iter()
                .filter_map(|track| {
                    let row = RowRef::Track(track.track_id);
                    let captioned = self.captioned_columns(row);
                    if captioned.len() < 2 {
                        return None;
                    }
                    let lines: Vec<&str> = captioned.iter().map(|(_, l)| l.as_str()).collect();
                    let key = if task == TaskKind::CrossSegmentQa {
                        "segment_caption"
                    } else {
                        "descriptions"
                    };
                    Some(Selection {
                        cells: captioned
                            .iter()
                            .map(|&(j, _)| CellRef { row, column: j })
                            .collect(),
                        columns: captioned.iter().map(|&(j, _)| j).collect(),
                        instance_class: Some(track.class_label.clone()),
                        bindings: bind(vec![
                            ("instance_class", track.class_label.clone()),
                            (key, lines.join("\n")),
                        ]),
                    })
                })
                .collect(),
        }
    }
}

/// Splits a reply on `User:` / `Assistant:` line prefixes. Text before the
/// first prefix is dropped when any prefix exists; a reply with no prefix
/// becomes one assistant turn. Blank turns are removed.
pub fn parse_dialogue(reply: &str) -> Vec<Turn> {
    let mut turns: Vec<Turn> = Vec::new();
    let mut any_prefix = false;
    for line in reply.lines() {
        let trimmed = line.trim();
        let (role, rest) = if let Some(rest) = trimmed.strip_prefix("User:") {
            (Some(Role::User), rest)
        } else if let Some(rest) = trimmed.strip_prefix("Assistant:") {
            (Some(Role::Assistant), rest)
        } else {
            (None, trimmed)
        };
        match role {
            Some(role) => {
                any_prefix = true;
                turns.push(Turn {
                    role,
                    text: rest.trim().to_string(),
                });
            }
            None if rest.is_empty() => {}
            None => {
                if let Some(last) = turns.last_mut() {
                    if !last.text.is_empty() {
                        last.text.push('\n');
                    }
                    last.text.push_str(rest);
                }
            }
        }
    }
    if !any_prefix {
        let text = reply.trim();
        return if text.is_empty() {
            Vec::new()
        } else {
            vec![Turn::assistant(text)]
        };
    }
    turns.retain(|t| !t.text.is_empty());
    turns
}

/// The last assistant turn of a prefixed reply, or the whole trimmed reply.
fn single_output(reply: &str) -> Option<String> {
    let turns = parse_dialogue(reply);
    turns
        .iter()
        .rev()
        .find(|t| t.role == Role::Assistant)
        .or(turns.last())
        .map(|t| t.text.clone())
}

/// Lines shaped `1. question`; the whole text when there are none.
fn numbered_questions(text: &str) -> Vec<String> {
    let numbered: Vec<String> = text
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let digits = line.chars().take_while(char::is_ascii_digit).count();
            if digits == 0 {
                return None;
            }
            line[digits..]
                .strip_prefix('.')
                .map(|q| q.trim().to_string())
                .filter(|q| !q.is_empty())
        })
        .collect();
    if numbered.is_empty() {
        vec![text.trim().to_string()]
    } else {
        numbered
    }
}

fn build_conversation(
    view: &View<'_>,
    task: TaskKind,
    sel: &Selection,
    reply: &str,
) -> std::result::Result<Vec<Turn>, String> {
    let class = sel.instance_class.as_deref().unwrap_or("instance");
    let spans: Vec<String> = sel.columns.iter().map(|&j| view.span(j)).collect();
    let dialogue = |default_question: String, prefix: Option<String>| {
        let mut turns = parse_dialogue(reply);
        if turns.first().map(|t| t.role) == Some(Role::Assistant) {
            turns.insert(0, Turn::user(default_question));
        }
        if let (Some(prefix), Some(first)) = (prefix, turns.first_mut()) {
            first.text = format!("{prefix}{}", first.text);
        }
        turns
    };
    let output = || {
        single_output(reply)
            .filter(|t| !t.is_empty())
            .ok_or("reply is empty")
    };
    let turns = match task {
        TaskKind::SegmentCaptioning => vec![
            Turn::user(format!("Describe what happens in the clip {}.", spans[0])),
            Turn::assistant(output()?),
        ],
        TaskKind::SegmentQa => dialogue(
            "What happens in this clip?".into(),
            Some(format!("For the clip {}: ", spans[0])),
        ),
        TaskKind::InstanceQa => dialogue(
            format!("What is the {class} doing?"),
            Some(format!("For the {class} in the clip {}: ", spans[0])),
        ),
        TaskKind::DirectLocalization => {
            vec![Turn::user(output()?), Turn::assistant(spans[0].clone())]
        }
        TaskKind::InferentialLocalization => numbered_questions(&output()?)
            .into_iter()
            .flat_map(|q| [Turn::user(q), Turn::assistant(spans[0].clone())])
            .collect(),
        TaskKind::ComposedRetrieval => {
            let text = output()?;
            let source = format!("clip at {}", spans[0]);
            let instruction = if text.contains(SOURCE_CLIP_MARKER) {
                text.replace(SOURCE_CLIP_MARKER, &source)
            } else {
                format!("Please watch the {source}. {text}")
            };
            vec![Turn::user(instruction), Turn::assistant(spans[1].clone())]
        }
        TaskKind::InstanceActivitySummarizing => vec![
            Turn::user(format!(
                "Summarize the activities of the {class} throughout the video."
            )),
            Turn::assistant(output()?),
        ],
        TaskKind::CrossSegmentQa => dialogue(
            format!(
                "What does the {class} do across the clips {}?",
                spans.join(", ")
            ),
            None,
        ),
    };
    if turns.is_empty() {
        return Err("reply has no usable turns".into());
    }
    Ok(turns)
}

/// Calls the client for every prompt with at most `max_in_flight` requests
/// outstanding. Results come back in prompt order.
fn complete_all(
    client: &dyn LlmClient,
    prompts: &[&str],
    max_in_flight: usize,
) -> Vec<Result<String>> {
    let workers = max_in_flight.max(1).min(prompts.len());
    if workers <= 1 {
        return prompts.iter().map(|p| client.complete(p)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> =
        Mutex::new((0..prompts.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let r = client.complete(prompts[i]);
                results
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers have exited")
        .into_iter()
        .map(|r| r.expect("every prompt was claimed"))
        .collect()
}

/// Builds instruction records for one matrix.
///
/// Source cells are drawn first with a generator seeded from `seed` and the
/// video id, so the selection is independent of client timing. Client
/// failures and unparseable replies become failure entries; the remaining
/// records keep plan order.
pub fn generate_instructions(
    matrix: &InstanceEventMatrix,
    client: &dyn LlmClient,
    plan: &Plan,
    seed: u64,
    options: &GenerateOptions,
) -> Result<GenerationOutput> {
    let view = View { m: matrix };
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(seed, &matrix.video_id));
    let mut output = GenerationOutput::default();
    let mut jobs: Vec<Job> = Vec::new();

    for (&task, &count) in plan {
        if count == 0 {
            continue;
        }
        let candidates = view.candidates(task);
        if candidates.is_empty() {
            for index in 0..count {
                output.failures.push(GenerationFailure {
                    video_id: matrix.video_id.clone(),
                    task,
                    index,
                    stage: Stage::Select,
                    message: format!("no matrix cells carry what {task} needs"),
                    raw_reply: None,
                });
            }
            continue;
        }
        let template = match options.extra_examples.get(&task) {
            Some(extra) => task.template().with_extra_examples(extra),
            None => task.template(),
        };
        let mut order: Vec<usize> = Vec::new();
        while order.len() < count {
            let mut round: Vec<usize> = (0..candidates.len()).collect();
            round.shuffle(&mut rng);
            order.extend(round);
        }
        for (index, &c) in order[..count].iter().enumerate() {
            let selection = candidates[c].clone();
            let prompt = fill_prompt(&template, &selection.bindings)?;
            jobs.push(Job {
                task,
                index,
                selection,
                prompt,
            });
        }
    }

    let prompts: Vec<&str> = jobs.iter().map(|j| j.prompt.as_str()).collect();
    let replies = complete_all(client, &prompts, options.max_in_flight);

    for (job, reply) in jobs.iter().zip(replies) {
        let failure = |stage, message: String, raw_reply| GenerationFailure {
            video_id: matrix.video_id.clone(),
            task: job.task,
            index: job.index,
            stage,
            message,
            raw_reply,
        };
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                log::warn!(
                    "{} {} #{}: client failed: {e}",
                    matrix.video_id,
                    job.task,
                    job.index
                );
                output
                    .failures
                    .push(failure(Stage::Client, e.to_string(), None));
                continue;
            }
        };
        let record = build_conversation(&view, job.task, &job.selection, &reply)
            .map_err(|m| m.to_string())
            .map(|conversation| InstructionRecord {
                id: format!("{}-{}-{:04}", matrix.video_id, job.task, job.index),
                video_id: matrix.video_id.clone(),
                task: job.task,
                conversation,
                grounding: job
                    .selection
                    .columns
                    .iter()
                    .map(|&j| {
                        let e = &matrix.events[j];
                        Interval {
                            start: e.start_time.value(),
                            end: e.end_time.value(),
                        }
                    })
                    .collect(),
                source_cells: job.selection.cells.clone(),
            })
            .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()));
        match record {
            Ok(r) => output.records.push(r),
            Err(message) => {
                log::warn!(
                    "{} {} #{}: skipping unparseable reply: {message}; raw reply: {reply:?}",
                    matrix.video_id,
                    job.task,
                    job.index
                );
                output
                    .failures
                    .push(failure(Stage::Parse, message, Some(reply)));
            }
        }
    }
    Ok(output)
}
