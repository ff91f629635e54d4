//! Text serialization of captioned event sequences and the sequence
//! negative log-likelihood over supplied log-probabilities.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Event;
use crate::temporal_space::NormalizedTime;

/// Tolerance on the log-sum-exp of a text row.
pub const ROW_NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionedEvent {
    pub start: NormalizedTime,
    pub end: NormalizedTime,
    pub caption: String,
}

/// Events ordered by start time, each with a non-empty caption.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CaptionedEvent>")]
pub struct EventSequence {
    events: Vec<CaptionedEvent>,
}

impl TryFrom<Vec<CaptionedEvent>> for EventSequence {
    type Error = Error;

    fn try_from(events: Vec<CaptionedEvent>) -> Result<Self> {
        Self::new(events)
    }
}

impl EventSequence {
    pub fn new(events: Vec<CaptionedEvent>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.end < e.start {
                return Err(Error::Validation(format!(
                    "event {i} ends at {} before it starts at {}",
                    e.end.value(),
                    e.start.value()
                )));
            }
            if e.caption.trim().is_empty() {
                return Err(Error::Validation(format!("event {i} has an empty caption")));
            }
            if i > 0 && e.start < events[i - 1].start {
                return Err(Error::Validation(format!(
                    "event {i} starts before event {}",
                    i - 1
                )));
            }
        }
        Ok(EventSequence { events })
    }

    /// Builds a sequence from segmenter events; every event needs a caption.
    pub fn from_events(events: &[Event]) -> Result<Self> {
        let captioned = events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let caption = e
                    .caption
                    .clone()
                    .ok_or_else(|| Error::Validation(format!("event {i} has no caption")))?;
                Ok(CaptionedEvent {
                    start: e.start_time,
                    end: e.end_time,
                    caption,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(captioned)
    }

    pub fn events(&self) -> &[CaptionedEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum TimeFormat {
    /// `<t=0.250000> <t=0.500000> caption`
    Token,
    /// `15.50s-30.75s : caption`, with times scaled by `duration` seconds.
    Seconds { duration: f64 },
}

impl TimeFormat {
    fn check(&self) -> Result<()> {
        match *self {
            TimeFormat::Seconds { duration } if !(duration > 0.0 && duration.is_finite()) => {
                Err(Error::Input(format!(
                    "seconds format needs a positive duration, got {duration}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// The `#format=...` header line, without a trailing newline.
    pub fn header(&self) -> String {
        match self {
            TimeFormat::Token => "#format=token".to_string(),
            TimeFormat::Seconds { duration } => format!("#format=seconds;duration={duration}"),
        }
    }
}

impl fmt::Display for TimeFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.header())
    }
}

impl FromStr for TimeFormat {
    type Err = Error;

    /// Accepts a header line with or without the leading `#`.
    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().trim_start_matches('#');
        let mut kind = None;
        let mut duration = None;
        for part in body.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| header_error(format!("expected key=value, got {part:?}")))?;
            match key.trim() {
                "format" => kind = Some(value.trim().to_string()),
                "duration" => {
                    duration =
                        Some(value.trim().parse::<f64>().map_err(|_| {
                            header_error(format!("duration {value:?} is not a number"))
                        })?)
                }
                other => return Err(header_error(format!("unknown header key {other:?}"))),
            }
        }
        let format = match kind.as_deref() {
            Some("token") => TimeFormat::Token,
            Some("seconds") => TimeFormat::Seconds {
                duration: duration
                    .ok_or_else(|| header_error("seconds format needs a duration".into()))?,
            },
            Some(other) => return Err(header_error(format!("unknown format {other:?}"))),
            None => return Err(header_error("missing format key".into())),
        };
        format.check()?;
        Ok(format)
    }
}

fn header_error(message: String) -> Error {
    Error::Parse { line: 1, message }
}

fn escape_caption(caption: &str) -> String {
    let mut out = String::with_capacity(caption.len());
    for c in caption.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_caption(text: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// `15.50s-30.75s` for a span of a `duration`-second video.
pub fn seconds_span(start: NormalizedTime, end: NormalizedTime, duration: f64) -> String {
    format!(
        "{:.2}s-{:.2}s",
        start.to_seconds(duration),
        end.to_seconds(duration)
    )
}

/// One line per event, joined by `\n`, no trailing newline.
pub fn render_event_sequence(seq: &EventSequence, format: TimeFormat) -> Result<String> {
    format.check()?;
    let mut out = String::new();
    for (i, e) in seq.events.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let caption = escape_caption(&e.caption);
        match format {
            TimeFormat::Token => {
                write!(
                    out,
                    "<t={:.6}> <t={:.6}> {caption}",
                    e.start.value(),
                    e.end.value()
                )
            }
            TimeFormat::Seconds { duration } => write!(
                out,
                "{} : {caption}",
                seconds_span(e.start, e.end, duration)
            ),
        }
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

/// Inverse of [`render_event_sequence`]. Blank lines are skipped; line
/// numbers in errors are 1-based and count blank lines.
pub fn parse_event_sequence(text: &str, format: TimeFormat) -> Result<EventSequence> {
    parse_lines(text, format, 0)
}

fn parse_lines(text: &str, format: TimeFormat, line_offset: usize) -> Result<EventSequence> {
    format.check()?;
    let mut events = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1 + line_offset;
        let fail = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (start, end, caption) = match format {
            TimeFormat::Token => split_token_line(line),
            TimeFormat::Seconds { .. } => split_seconds_line(line),
        }
        .map_err(fail)?;
        let to_time = |raw: f64| match format {
            TimeFormat::Token => NormalizedTime::new(raw),
            TimeFormat::Seconds { duration } => NormalizedTime::from_seconds(raw, duration),
        };
        let start = to_time(start).map_err(|e| at_line(e, line_no))?;
        let end = to_time(end).map_err(|e| at_line(e, line_no))?;
        if end < start {
            return Err(Error::Validation(format!(
                "line {line_no}: end {} precedes start {}",
                end.value(),
                start.value()
            )));
        }
        let caption = unescape_caption(caption).map_err(fail)?;
        if caption.trim().is_empty() {
            return Err(fail("empty caption".into()));
        }
        events.push(CaptionedEvent {
            start,
            end,
            caption,
        });
    }
    EventSequence::new(events)
}

fn at_line(err: Error, line: usize) -> Error {
    match err {
        Error::Range(m) => Error::Range(format!("line {line}: {m}")),
        other => other,
    }
}

fn take_marker(s: &str) -> std::result::Result<(f64, &str), String> {
    let rest = s
        .strip_prefix("<t=")
        .ok_or_else(|| format!("expected '<t=' at {:?}", truncate(s)))?;
    let close = rest.find('>').ok_or("unterminated time marker")?;
    let value = rest[..close]
        .parse::<f64>()
        .map_err(|_| format!("bad time value {:?}", &rest[..close]))?;
    Ok((value, &rest[close + 1..]))
}

fn split_token_line(line: &str) -> std::result::Result<(f64, f64, &str), String> {
    let (start, rest) = take_marker(line)?;
    let rest = rest
        .strip_prefix(' ')
        .ok_or("expected a space after the start marker")?;
    let (end, rest) = take_marker(rest)?;
    let caption = rest
        .strip_prefix(' ')
        .ok_or("expected a space before the caption")?;
    Ok((start, end, caption))
}

fn split_seconds_line(line: &str) -> std::result::Result<(f64, f64, &str), String> {
    let (span, caption) = line.split_once(" : ").ok_or_else(|| {
        format!(
            "expected 'START s-END s : caption', got {:?}",
            truncate(line)
        )
    })?;
    let (a, b) = span
        .split_once("s-")
        .ok_or_else(|| format!("bad time span {span:?}"))?;
    let b = b
        .strip_suffix('s')
        .ok_or_else(|| format!("bad time span {span:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad seconds value {v:?}"))
    };
    Ok((parse(a)?, parse(b)?, caption))
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(40) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// A header line followed by the rendered events.
pub fn render_document(seq: &EventSequence, format: TimeFormat) -> Result<String> {
    let body = render_event_sequence(seq, format)?;
    if body.is_empty() {
        Ok(format!("{}\n", format.header()))
    } else {
        Ok(format!("{}\n{body}\n", format.header()))
    }
}

/// Reads a document whose first line is the `#format=...` header.
pub fn parse_document(text: &str) -> Result<(TimeFormat, EventSequence)> {
    let (header, body) = text.split_once('\n').unwrap_or((text, ""));
    if !header.starts_with("#format=") {
        return Err(header_error("first line must be a #format= header".into()));
    }
    let format: TimeFormat = header.parse()?;
    let seq = parse_lines(body, format, 1)?;
    Ok((format, seq))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetToken {
    Text(u32),
    Time(NormalizedTime),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenizedTarget {
    pub tokens: Vec<TargetToken>,
}

impl TokenizedTarget {
    /// Two time markers per event followed by the caption's token ids.
    pub fn from_sequence(seq: &EventSequence, mut tokenize: impl FnMut(&str) -> Vec<u32>) -> Self {
        let mut tokens = Vec::new();
        for e in seq.events() {
            tokens.push(TargetToken::Time(e.start));
            tokens.push(TargetToken::Time(e.end));
            tokens.extend(tokenize(&e.caption).into_iter().map(TargetToken::Text));
        }
        TokenizedTarget { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn log_sum_exp(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-probability of `target`.
///
/// Row `i` of `logprobs` is the model's distribution for token `i` given the
/// tokens before it. Rows at time-marker positions are not read; those
/// positions score `time_logprob(tau)` instead. With only text tokens the
/// result is non-negative; a time density above 1 can push it below zero.
pub fn sequence_nll(
    target: &TokenizedTarget,
    logprobs: ArrayView2<'_, f64>,
    mut time_logprob: impl FnMut(NormalizedTime) -> f64,
) -> Result<f64> {
    let (rows, vocab) = logprobs.dim();
    if target.is_empty() {
        return Err(Error::Shape("target has no tokens".into()));
    }
    if rows != target.len() {
        return Err(Error::Shape(format!(
            "logprobs has {rows} rows for a target of length {}",
            target.len()
        )));
    }
    let mut total = 0.0;
    for (i, token) in target.tokens.iter().enumerate() {
        let lp = match *token {
            TargetToken::Text(id) => {
                let row = logprobs.row(i);
                let lse = log_sum_exp(row.iter().copied());
                if lse.is_nan() || lse.abs() > ROW_NORMALIZATION_TOL {
                    return Err(Error::Input(format!(
                        "row {i} log-sum-exps to {lse}, expected 0"
                    )));
                }
                let id = id as usize;
                if id >= vocab {
                    return Err(Error::Index(format!(
                        "token id {id} at position {i} is outside a vocabulary of {vocab}"
                    )));
                }
                row[id]
            }
            TargetToken::Time(tau) => {
                let lp = time_logprob(tau);
                if lp.is_nan() || lp == f64::INFINITY {
                    return Err(Error::Input(format!(
                        "time log-density at position {i} is {lp}"
                    )));
                }
                lp
            }
        };
        total -= lp;
    }
    Ok(total / target.len() as f64)
}
