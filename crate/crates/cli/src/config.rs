//! One JSON document holding every tunable; each field is optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use momentkit::gradcheck::DEFAULT_TOLERANCE;
use momentkit::instruct::{HttpClientConfig, Plan, TaskKind};
use momentkit::metrics::{highlight_iou_grid, DEFAULT_F1_OVERLAPS, DEFAULT_GROUNDING_THRESHOLDS};
use momentkit::segmentation::SegmentConfig;
use momentkit::temporal_space::{DEFAULT_ANCHORS, DEFAULT_FRAMES};
use momentkit::tracking::LinkParams;
use momentkit::trainer::ContinuitySettings;
use momentkit::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub n_anchors: usize,
    pub dim: usize,
    pub seed: u64,
    /// Frames sampled per video.
    pub frames: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            n_anchors: DEFAULT_ANCHORS,
            dim: 64,
            seed: 0,
            frames: DEFAULT_FRAMES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub client: ClientKind,
    /// JSON object mapping prompt SHA-256 hex digests to replies.
    pub mock_replies: Option<PathBuf>,
    pub http: HttpClientConfig,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            client: ClientKind::Mock,
            mock_replies: None,
            http: HttpClientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub seed: u64,
    /// Records per task; empty means one of each.
    pub plan: Plan,
    pub max_in_flight: usize,
    pub extra_examples: BTreeMap<TaskKind, String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            seed: 0,
            plan: Plan::new(),
            max_in_flight: 4,
            extra_examples: BTreeMap::new(),
        }
    }
}

impl GenerationConfig {
    pub fn effective_plan(&self) -> Plan {
        if self.plan.is_empty() {
            TaskKind::ALL.iter().map(|&t| (t, 1)).collect()
        } else {
            self.plan.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub grounding_thresholds: Vec<f64>,
    pub f1_overlaps: Vec<f64>,
    pub fps: f64,
    pub iou_grid: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            grounding_thresholds: DEFAULT_GROUNDING_THRESHOLDS.to_vec(),
            f1_overlaps: DEFAULT_F1_OVERLAPS.to_vec(),
            fps: 1.0,
            iou_grid: highlight_iou_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub cases: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            cases: 100,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segment: SegmentConfig,
    pub tracker: LinkParams,
    pub space: SpaceConfig,
    pub continuity: ContinuitySettings,
    pub generation: GenerationConfig,
    pub llm: LlmConfig,
    pub metrics: MetricsConfig,
    pub gradcheck: GradcheckConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
    }

    /// SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
