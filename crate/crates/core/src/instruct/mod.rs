//! Instruction generation from an instance-event matrix: task kinds, prompt
//! templates, LLM clients and reply parsing.

mod client;
mod generate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use client::{HttpClient, HttpClientConfig, LlmClient, MockClient, DEFAULT_TOKEN_ENV};
pub use generate::{
    generate_instructions, parse_dialogue, CellRef, GenerateOptions, GenerationFailure,
    GenerationOutput, InstructionRecord, Plan, Role, Stage, Turn, INSTRUCTION_RECORD_SCHEMA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SegmentCaptioning,
    SegmentQa,
    InstanceQa,
    DirectLocalization,
    InferentialLocalization,
    ComposedRetrieval,
    InstanceActivitySummarizing,
    CrossSegmentQa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    SingleSegment,
    CrossSegment,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::SegmentCaptioning,
        TaskKind::SegmentQa,
        TaskKind::InstanceQa,
        TaskKind::DirectLocalization,
        TaskKind::InferentialLocalization,
        TaskKind::ComposedRetrieval,
        TaskKind::InstanceActivitySummarizing,
        TaskKind::CrossSegmentQa,
    ];

    pub fn arity(self) -> Arity {
        match self {
            TaskKind::SegmentCaptioning
            | TaskKind::SegmentQa
            | TaskKind::InstanceQa
            | TaskKind::DirectLocalization
            | TaskKind::InferentialLocalization => Arity::SingleSegment,
            TaskKind::ComposedRetrieval
            | TaskKind::InstanceActivitySummarizing
            | TaskKind::CrossSegmentQa => Arity::CrossSegment,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SegmentCaptioning => "segment_captioning",
            TaskKind::SegmentQa => "segment_qa",
            TaskKind::InstanceQa => "instance_qa",
            TaskKind::DirectLocalization => "direct_localization",
            TaskKind::InferentialLocalization => "inferential_localization",
            TaskKind::ComposedRetrieval => "composed_retrieval",
            TaskKind::InstanceActivitySummarizing => "instance_activity_summarizing",
            TaskKind::CrossSegmentQa => "cross_segment_qa",
        }
    }

    pub fn template(self) -> PromptTemplate {
        let body = match self {
            TaskKind::SegmentCaptioning => include_str!("../../templates/segment_captioning.txt"),
            TaskKind::SegmentQa => include_str!("../../templates/segment_qa.txt"),
            TaskKind::InstanceQa => include_str!("../../templates/instance_qa.txt"),
            TaskKind::DirectLocalization => include_str!("../../templates/direct_localization.txt"),
            TaskKind::InferentialLocalization => {
                include_str!("../../templates/inferential_localization.txt")
            }
            TaskKind::ComposedRetrieval => include_str!("../../templates/composed_retrieval.txt"),
            TaskKind::InstanceActivitySummarizing => {
                include_str!("../../templates/instance_activity_summarizing.txt")
            }
            TaskKind::CrossSegmentQa => include_str!("../../templates/cross_segment_qa.txt"),
        };
        PromptTemplate {
            task: self,
            body: body.to_string(),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown task kind {s:?}")))
    }
}

pub const PLACEHOLDERS: [&str; 6] = [
    "descriptions",
    "segment_caption",
    "instance_class",
    "content",
    "source_clip_content",
    "target_clip_content",
];

/// Literal marker that some templates ask the model to echo; it is not a
/// placeholder and survives filling untouched.
pub const SOURCE_CLIP_MARKER: &str = "{{SOURCE_CLIP}}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task: TaskKind,
    pub body: String,
}

/// A piece of a template body.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

/// Splits a body into text and `{name}` slots. `{{...}}` runs and braces
/// not followed by a lowercase identifier and `}` are text.
fn pieces(body: &str) -> Vec<Piece<'_>> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if bytes.get(i + 1) == Some(&b'{') {
                match body[i..].find("}}") {
                    Some(close) => i += close + 2,
                    None => i += 2,
                }
                continue;
            }
            let name_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_lowercase() || **b == b'_')
                .count();
            if name_len > 0 && bytes.get(i + 1 + name_len) == Some(&b'}') {
                if text_start < i {
                    out.push(Piece::Text(&body[text_start..i]));
                }
                out.push(Piece::Slot(&body[i + 1..i + 1 + name_len]));
                i += name_len + 2;
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < body.len() {
        out.push(Piece::Text(&body[text_start..]));
    }
    out
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in pieces(&self.body) {
            if let Piece::Slot(name) = p {
                if !seen.contains(&name) {
                    seen.push(name);
                }
            }
        }
        seen
    }

    pub fn validate(&self) -> Result<()> {
        let unknown: Vec<String> = self
            .placeholders()
            .into_iter()
            .filter(|p| !PLACEHOLDERS.contains(p))
            .map(String::from)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "template for {} uses unknown placeholders {unknown:?}",
                self.task
            )))
        }
    }

    /// Appends extra in-context examples after the body, separated by a
    /// blank line.
    pub fn with_extra_examples(mut self, examples: &str) -> Self {
        if !examples.is_empty() {
            self.body.push_str("\n\n");
            self.body.push_str(examples);
        }
        self
    }
}

/// Single-pass substitution: bound values are inserted verbatim and never
/// rescanned. Unused bindings are ignored.
pub fn fill_prompt(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String> {
    let parts = pieces(&template.body);
    let missing: BTreeSet<String> = parts
        .iter()
        .filter_map(|p| match p {
            Piece::Slot(name) if !bindings.contains_key(*name) => Some(name.to_string()),
            _ => None,
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Template {
            missing: missing.into_iter().collect(),
        });
    }
    let mut out = String::with_capacity(template.body.len());
    for p in parts {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => out.push_str(&bindings[name]),
        }
    }
    Ok(out)
}
