//! Instance tracks and the instance-event matrix.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::segmentation::{BBox, Event};
use crate::vecmath;

/// One detector output, before linking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetection {
    pub frame_index: u64,
    pub class_label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub roi_feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame_index: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub roi_feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTrack {
    pub track_id: u32,
    pub class_label: String,
    pub first_frame: u64,
    pub last_frame: u64,
    pub observations: Vec<Observation>,
}

impl InstanceTrack {
    fn last(&self) -> &Observation {
        self.observations.last().expect("tracks are never empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub iou_min: f64,
    pub feature_cos_min: f64,
    /// A track may skip at most this many frame indices between observations.
    pub max_gap_frames: u64,
    pub iou_weight: f64,
    pub cos_weight: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            iou_min: 0.3,
            feature_cos_min: 0.5,
            max_gap_frames: 5,
            iou_weight: 1.0,
            cos_weight: 1.0,
        }
    }
}

/// Greedy frame-by-frame linking.
///
/// Each detection may extend an open track of the same class whose last box
/// overlaps by at least `iou_min` and whose last roi feature has cosine at
/// least `feature_cos_min`. Candidate pairs are taken by descending
/// `iou_weight * IoU + cos_weight * cosine`, ties going to the older track
/// and then the lower detection index. Leftover detections open new tracks,
/// numbered in creation order.
pub fn link_tracks(detections: &[RawDetection], params: &LinkParams) -> Result<Vec<InstanceTrack>> {
    for (i, d) in detections.iter().enumerate() {
        if i > 0 && d.frame_index < detections[i - 1].frame_index {
            return Err(Error::Input(format!(
                "detection {i} goes back to frame {} after frame {}",
                d.frame_index,
                detections[i - 1].frame_index
            )));
        }
        if d.roi_feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "detection {i} has a non-finite roi feature"
            )));
        }
    }

    let mut tracks: Vec<InstanceTrack> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    for group in detections.chunk_by(|a, b| a.frame_index == b.frame_index) {
        let frame = group[0].frame_index;
        open.retain(|&t| frame - tracks[t].last_frame - 1 <= params.max_gap_frames);

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for &t in &open {
            let track = &tracks[t];
            let last = track.last();
            for (di, det) in group.iter().enumerate() {
                if det.class_label != track.class_label {
                    continue;
                }
                let iou = last.bbox.iou(&det.bbox);
                let Some(cos) = vecmath::cosine(&last.roi_feature, &det.roi_feature) else {
                    continue;
                };
                if iou >= params.iou_min && cos >= params.feature_cos_min {
                    candidates.push((params.iou_weight * iou + params.cos_weight * cos, t, di));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut det_taken = vec![false; group.len()];
        let mut track_taken: Vec<usize> = Vec::new();
        for (_, t, di) in candidates {
            if det_taken[di] || track_taken.contains(&t) {
                continue;
            }
            det_taken[di] = true;
            track_taken.push(t);
            let det = &group[di];
            let track = &mut tracks[t];
            track.last_frame = frame;
            track.observations.push(Observation {
                frame_index: frame,
                bbox: det.bbox,
                roi_feature: det.roi_feature.clone(),
            });
        }

        for (di, det) in group.iter().enumerate() {
            if det_taken[di] {
                continue;
            }
            let id = tracks.len();
            tracks.push(InstanceTrack {
                track_id: id as u32,
                class_label: det.class_label.clone(),
                first_frame: frame,
                last_frame: frame,
                observations: vec![Observation {
                    frame_index: frame,
                    bbox: det.bbox,
                    roi_feature: det.roi_feature.clone(),
                }],
            });
            open.push(id);
        }
    }
    Ok(tracks)
}

pub fn load_detections(path: &Path) -> Result<Vec<RawDetection>> {
    read_jsonl(path)
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// A matrix row: the whole video or one instance track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RowRef {
    Video,
    Track(u32),
}

impl fmt::Display for RowRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowRef::Video => write!(f, "video"),
            RowRef::Track(id) => write!(f, "track {id}"),
        }
    }
}

impl Serialize for RowRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RowRef::Video => s.serialize_str("video"),
            RowRef::Track(id) => s.serialize_u32(*id),
        }
    }
}

impl<'de> Deserialize<'de> for RowRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Id(u32),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Id(id) => Ok(RowRef::Track(id)),
            Repr::Name(n) if n.eq_ignore_ascii_case("video") => Ok(RowRef::Video),
            Repr::Name(n) => Err(serde::de::Error::custom(format!(
                "row must be \"video\" or a track id, got {n:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClueKind {
    Scene,
    Instance,
    Action,
    Attribute,
    Caption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clue {
    pub kind: ClueKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row: RowRef,
    pub column: usize,
    pub present: bool,
    pub clues: Vec<Clue>,
    pub caption: Option<String>,
}

/// Output of an external captioner or tagger for one matrix cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClueRecord {
    pub row: RowRef,
    pub event_index: usize,
    pub kind: ClueKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMeta {
    pub video_id: String,
    /// Seconds; used to render timestamps.
    pub duration: f64,
}

/// Rows are the whole video followed by each track; columns are events.
/// `cells` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEventMatrix {
    pub video_id: String,
    pub duration: f64,
    pub tracks: Vec<InstanceTrack>,
    pub events: Vec<Event>,
    pub cells: Vec<Cell>,
}

impl InstanceEventMatrix {
    pub fn rows(&self) -> Vec<RowRef> {
        std::iter::once(RowRef::Video)
            .chain(self.tracks.iter().map(|t| RowRef::Track(t.track_id)))
            .collect()
    }

    fn row_position(&self, row: RowRef) -> Option<usize> {
        match row {
            RowRef::Video => Some(0),
            RowRef::Track(id) => self
                .tracks
                .iter()
                .position(|t| t.track_id == id)
                .map(|p| p + 1),
        }
    }

    pub fn cell(&self, row: RowRef, column: usize) -> Option<&Cell> {
        let r = self.row_position(row)?;
        if column >= self.events.len() {
            return None;
        }
        self.cells.get(r * self.events.len() + column)
    }

    fn cell_mut(&mut self, row: RowRef, column: usize) -> Option<&mut Cell> {
        let r = self.row_position(row)?;
        if column >= self.events.len() {
            return None;
        }
        let n = self.events.len();
        self.cells.get_mut(r * n + column)
    }

    pub fn track(&self, id: u32) -> Option<&InstanceTrack> {
        self.tracks.iter().find(|t| t.track_id == id)
    }
}

pub fn build_matrix(
    meta: &VideoMeta,
    tracks: &[InstanceTrack],
    events: &[Event],
) -> Result<InstanceEventMatrix> {
    if !(meta.duration.is_finite() && meta.duration > 0.0) {
        return Err(Error::Input(format!(
            "video duration must be positive, got {}",
            meta.duration
        )));
    }
    for (j, e) in events.iter().enumerate() {
        if e.end_frame < e.start_frame || e.end_time < e.start_time {
            return Err(Error::Input(format!("event {j} ends before it starts")));
        }
        if j > 0 && e.start_frame <= events[j - 1].end_frame {
            return Err(Error::Input(format!(
                "event {j} overlaps or precedes event {}",
                j - 1
            )));
        }
    }
    let mut ids: Vec<u32> = tracks.iter().map(|t| t.track_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != tracks.len() {
        return Err(Error::Input("track ids must be unique".into()));
    }

    let mut cells = Vec::with_capacity((tracks.len() + 1) * events.len());
    for column in 0..events.len() {
        cells.push(Cell {
            row: RowRef::Video,
            column,
            present: true,
            clues: Vec::new(),
            caption: None,
        });
    }
    for track in tracks {
        for (column, event) in events.iter().enumerate() {
            let present = track
                .observations
                .iter()
                .any(|o| event.contains_frame(o.frame_index));
            cells.push(Cell {
                row: RowRef::Track(track.track_id),
                column,
                present,
                clues: Vec::new(),
                caption: None,
            });
        }
    }
    Ok(InstanceEventMatrix {
        video_id: meta.video_id.clone(),
        duration: meta.duration,
        tracks: tracks.to_vec(),
        events: events.to_vec(),
        cells,
    })
}

/// Applies clue records. Captions overwrite the cell caption; other kinds
/// append unless the same (kind, text) is already on the cell. Fails without
/// modifying anything if a record points at a missing or absent cell.
pub fn attach_clues(
    matrix: &InstanceEventMatrix,
    records: &[ClueRecord],
) -> Result<InstanceEventMatrix> {
    let mut out = matrix.clone();
    for record in records {
        let Some(cell) = out.cell_mut(record.row, record.event_index) else {
            return Err(Error::Reference(format!(
                "no cell for {}",
                serde_json::to_string(record)?
            )));
        };
        if !cell.present {
            return Err(Error::Reference(format!(
                "cell is not present for {}",
                serde_json::to_string(record)?
            )));
        }
        match record.kind {
            ClueKind::Caption => cell.caption = Some(record.text.clone()),
            kind => {
                let clue = Clue {
                    kind,
                    text: record.text.clone(),
                };
                if !cell.clues.contains(&clue) {
                    cell.clues.push(clue);
                }
            }
        }
    }
    Ok(out)
}

pub fn load_clues(path: &Path) -> Result<Vec<ClueRecord>> {
    read_jsonl(path)
}
