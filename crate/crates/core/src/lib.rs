//! Temporal grounding toolkit for video LLM research.
//!
//! * [`temporal_space`]: continuous temporal token space, timestamp
//!   encode/decode and neighboring token propagation gradients.
//! * [`trainer`]: small gradient-descent experiments over the anchor table
//!   and the continuity report built on PCA.
//! * [`segmentation`]: event boundary detection from frame differences and
//!   boundary consistency merging.
//! * [`tracking`]: greedy instance linking and the instance-event matrix.
//! * [`event_sequence`]: grounded event-sequence text codec and sequence NLL.
//! * [`metrics`]: temporal grounding, action segmentation and highlight
//!   detection metrics.
//! * [`instruct`]: prompt templates, LLM clients and instruction generation.

pub mod error;
pub mod event_sequence;
pub mod gradcheck;
pub mod instruct;
pub mod metrics;
pub mod segmentation;
pub mod synth;
pub mod temporal_space;
pub mod tracking;
pub mod trainer;
mod vecmath;

pub use error::{Error, Result};
pub use temporal_space::{NormalizedTime, Propagation, TemporalTokenSpace};
