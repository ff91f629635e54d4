//! Continuous temporal token space.
//!
//! `N` learnable anchor embeddings sit at the uniformly spaced normalized
//! times `(k-1)/(N-1)`, `k = 1..=N`. Any time in `[0, 1]` is encoded by
//! linear interpolation between the two surrounding anchors, so the space
//! forms a piecewise-linear curve through the anchors.
//!
//! Neighboring token propagation leaves the forward value of a token
//! untouched while routing its gradient to every anchor `i` with weight
//! `2^-|i-k|`, on top of the token's own identity path.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of temporal tokens used by the reference model.
pub const DEFAULT_ANCHORS: usize = 300;
/// Number of uniformly sampled frames per video used by the reference model.
pub const DEFAULT_FRAMES: usize = 300;

const INIT_STD: f64 = 0.02;
/// Float noise tolerated outside `[0, 1]` before a time is rejected.
const CLAMP_SLACK: f64 = 1e-12;
const LAYOUT: &str = "row-major-f32-le";

/// A fraction of the video duration, always inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NormalizedTime(f64);

impl NormalizedTime {
    pub const START: NormalizedTime = NormalizedTime(0.0);
    pub const END: NormalizedTime = NormalizedTime(1.0);

    /// Values within `1e-12` of the unit interval are clamped onto it.
    pub fn new(tau: f64) -> Result<Self> {
        if !(-CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&tau) {
            return Err(Error::Range(format!(
                "normalized time {tau} is outside [0, 1]"
            )));
        }
        Ok(NormalizedTime(tau.clamp(0.0, 1.0)))
    }

    pub fn from_seconds(seconds: f64, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Range(format!(
                "video duration must be positive, got {duration}"
            )));
        }
        Self::new(seconds / duration)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn to_seconds(self, duration: f64) -> f64 {
        self.0 * duration
    }
}

impl TryFrom<f64> for NormalizedTime {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        NormalizedTime::new(tau)
    }
}

impl From<NormalizedTime> for f64 {
    fn from(t: NormalizedTime) -> f64 {
        t.0
    }
}

/// How a token's gradient is routed to the anchor table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// Plain embedding lookup: only the token itself receives gradient.
    Disabled,
    /// Identity path plus `sum_i 2^-|i-k| t_i`; the token itself gets weight 2.
    #[default]
    Neighboring,
    /// Ablation: the decaying sum alone, so the token itself gets weight 1.
    NeighboringWithoutSelf,
}

impl Propagation {
    pub fn is_enabled(self) -> bool {
        !matches!(self, Propagation::Disabled)
    }

    /// Weight of anchor `i` in the backward pass of token `k` (both 0-based).
    pub fn weight(self, i: usize, k: usize) -> f64 {
        let distance = i.abs_diff(k);
        let decay = || 0.5f64.powi(distance.min(i32::MAX as usize) as i32);
        match self {
            Propagation::Disabled => {
                if i == k {
                    1.0
                } else {
                    0.0
                }
            }
            Propagation::Neighboring => {
                if i == k {
                    2.0
                } else {
                    decay()
                }
            }
            Propagation::NeighboringWithoutSelf => decay(),
        }
    }
}

/// Gradient of a scalar loss with respect to every anchor row.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGradients {
    pub grads: Array2<f64>,
    pub upstream: Array1<f64>,
}

/// Result of reading a time back out of an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decoded {
    pub tau: NormalizedTime,
    pub residual: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpaceHeader {
    n_anchors: usize,
    dim: usize,
    rng_seed: u64,
    layout: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTokenSpace {
    anchors: Array2<f64>,
    rng_seed: u64,
}

impl TemporalTokenSpace {
    /// Seeded Gaussian initialisation (mean 0, std 0.02). Values are rounded
    /// through `f32` so that the on-disk format round-trips exactly.
    pub fn new(n_anchors: usize, dim: usize, rng_seed: u64) -> Result<Self> {
        check_shape(n_anchors, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let normal = Normal::new(0.0, INIT_STD).expect("constant std is valid");
        let anchors = Array2::from_shape_simple_fn((n_anchors, dim), || {
            normal.sample(&mut rng) as f32 as f64
        });
        Ok(TemporalTokenSpace { anchors, rng_seed })
    }

    pub fn from_anchors(anchors: Array2<f64>, rng_seed: u64) -> Result<Self> {
        check_shape(anchors.nrows(), anchors.ncols())?;
        if anchors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("anchor values must be finite".into()));
        }
        // Row-major storage lets decoding walk rows as slices.
        let anchors = anchors.as_standard_layout().into_owned();
        Ok(TemporalTokenSpace { anchors, rng_seed })
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn anchors(&self) -> ArrayView2<'_, f64> {
        self.anchors.view()
    }

    /// Row of token `<k>`, 1-based.
    pub fn anchor(&self, k: usize) -> Result<ArrayView1<'_, f64>> {
        let row = self.token_row(k)?;
        Ok(self.anchors.row(row))
    }

    /// Normalized time represented by token `<k>`, 1-based.
    pub fn anchor_time(&self, k: usize) -> Result<NormalizedTime> {
        let row = self.token_row(k)?;
        NormalizedTime::new(row as f64 / (self.n_anchors() - 1) as f64)
    }

    /// Segment index `a` and fraction `f` such that `tau` lies at
    /// `(1-f)·anchor[a] + f·anchor[a+1]`.
    fn locate(&self, tau: NormalizedTime) -> (usize, f64) {
        let last_segment = self.n_anchors() - 2;
        if tau.value() >= 1.0 {
            return (last_segment, 1.0);
        }
        let mut p = tau.value() * (self.n_anchors() - 1) as f64;
        // `k / (N-1) * (N-1)` can miss `k` by an ulp; anchor times must map
        // onto the anchor itself.
        let nearest = p.round();
        if (p - nearest).abs() <= 4.0 * f64::EPSILON * nearest.max(1.0) {
            p = nearest;
        }
        let a = (p.floor() as usize).min(last_segment);
        (a, p - a as f64)
    }

    pub fn encode_time(&self, tau: NormalizedTime) -> Array1<f64> {
        let (a, f) = self.locate(tau);
        if f == 0.0 {
            return self.anchors.row(a).to_owned();
        }
        if f == 1.0 {
            return self.anchors.row(a + 1).to_owned();
        }
        let lo = self.anchors.row(a);
        let hi = self.anchors.row(a + 1);
        Array1::from_shape_fn(self.dim(), |j| (1.0 - f) * lo[j] + f * hi[j])
    }

    /// Nearest point on the piecewise-linear anchor curve. Ties resolve to
    /// the smallest time.
    pub fn decode_time(&self, embedding: ArrayView1<'_, f64>) -> Result<Decoded> {
        self.check_width(embedding.len(), "embedding")?;
        let segments = self.n_anchors() - 1;
        let dim = self.dim();
        let table = self.anchors.as_slice().expect("anchors are row-major");
        let e = embedding.to_vec();
        let mut best: Option<(f64, f64)> = None;
        for a in 0..segments {
            let lo = &table[a * dim..(a + 1) * dim];
            let hi = &table[(a + 1) * dim..(a + 2) * dim];
            let mut along = 0.0;
            let mut length_sq = 0.0;
            for ((&x, &l), &h) in e.iter().zip(lo).zip(hi) {
                along += (x - l) * (h - l);
                length_sq += (h - l) * (h - l);
            }
            let s = if length_sq > 0.0 {
                (along / length_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut dist_sq = 0.0;
            for ((&x, &l), &h) in e.iter().zip(lo).zip(hi) {
                let r = x - (l + s * (h - l));
                dist_sq += r * r;
            }
            if best.is_none_or(|(d, _)| dist_sq < d) {
                best = Some((dist_sq, (a as f64 + s) / segments as f64));
            }
        }
        let (dist_sq, tau) = best.expect("at least one segment");
        Ok(Decoded {
            tau: NormalizedTime::new(tau)?,
            residual: dist_sq.sqrt(),
        })
    }

    /// `t_adj` for token `<k>` (1-based): `sum_i 2^-|i-k| t_i`.
    pub fn neighbor_aggregate(&self, k: usize) -> Result<Array1<f64>> {
        let row = self.token_row(k)?;
        let mut acc = Array1::zeros(self.dim());
        for (i, anchor) in self.anchors.outer_iter().enumerate() {
            let w = Propagation::NeighboringWithoutSelf.weight(i, row);
            if w != 0.0 {
                acc.scaled_add(w, &anchor);
            }
        }
        Ok(acc)
    }

    /// Forward value of token `<k>` under neighboring token propagation:
    /// `t_k + t_adj - StopGrad(t_adj)`.
    ///
    /// The live and detached copies of `t_adj` are the same stored value, so
    /// their difference is `+0.0` and subtracting it leaves every bit of
    /// `t_k` intact (including a negative zero).
    pub fn ntp_forward(&self, k: usize) -> Result<Array1<f64>> {
        let row = self.token_row(k)?;
        let adj_live = self.neighbor_aggregate(k)?;
        let adj_detached = adj_live.clone();
        let anchor = self.anchors.row(row);
        Ok(Array1::from_shape_fn(self.dim(), |j| {
            anchor[j] - (adj_detached[j] - adj_live[j])
        }))
    }

    /// Gradient of `upstream · encode_time(tau)` with respect to the anchors,
    /// where each of the two interpolated tokens is routed per `propagation`.
    pub fn grad_wrt_anchors(
        &self,
        tau: NormalizedTime,
        upstream: ArrayView1<'_, f64>,
        propagation: Propagation,
    ) -> Result<AnchorGradients> {
        self.check_width(upstream.len(), "upstream gradient")?;
        let (a, f) = self.locate(tau);
        Ok(self.route(&[(a, 1.0 - f), (a + 1, f)], upstream, propagation))
    }

    /// Gradient for a lookup of token `<k>` itself (1-based), i.e. the
    /// interpolation at `tau_k` with its whole weight on one anchor.
    pub fn grad_at_anchor(
        &self,
        k: usize,
        upstream: ArrayView1<'_, f64>,
        propagation: Propagation,
    ) -> Result<AnchorGradients> {
        let row = self.token_row(k)?;
        self.check_width(upstream.len(), "upstream gradient")?;
        Ok(self.route(&[(row, 1.0)], upstream, propagation))
    }

    fn route(
        &self,
        tokens: &[(usize, f64)],
        upstream: ArrayView1<'_, f64>,
        propagation: Propagation,
    ) -> AnchorGradients {
        let mut grads = Array2::zeros(self.anchors.raw_dim());
        for (i, mut row) in grads.outer_iter_mut().enumerate() {
            let weight: f64 = tokens
                .iter()
                .filter(|(_, share)| *share != 0.0)
                .map(|&(k, share)| share * propagation.weight(i, k))
                .sum();
            if weight != 0.0 {
                row.scaled_add(weight, &upstream);
            }
        }
        AnchorGradients {
            grads,
            upstream: upstream.to_owned(),
        }
    }

    /// Adds the temporal embedding of each frame time to the frame feature.
    pub fn inject_time(
        &self,
        frame_features: ArrayView2<'_, f64>,
        frame_times: &[NormalizedTime],
    ) -> Result<Array2<f64>> {
        self.check_width(frame_features.ncols(), "frame feature")?;
        if frame_features.nrows() != frame_times.len() {
            return Err(Error::Shape(format!(
                "{} frame features but {} frame times",
                frame_features.nrows(),
                frame_times.len()
            )));
        }
        if let Some(w) = frame_times.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Validation(format!(
                "frame times must be non-decreasing (index {} > index {})",
                w,
                w + 1
            )));
        }
        let mut out = frame_features.to_owned();
        for (mut row, &tau) in out.outer_iter_mut().zip(frame_times) {
            row += &self.encode_time(tau);
        }
        Ok(out)
    }

    /// Plain gradient step on the anchor table.
    pub fn apply_gradients(&mut self, grads: &Array2<f64>, learning_rate: f64) -> Result<()> {
        if grads.raw_dim() != self.anchors.raw_dim() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match anchors {:?}",
                grads.shape(),
                self.anchors.shape()
            )));
        }
        self.anchors.scaled_add(-learning_rate, grads);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        let header = SpaceHeader {
            n_anchors: self.n_anchors(),
            dim: self.dim(),
            rng_seed: self.rng_seed,
            layout: LAYOUT.to_string(),
        };
        let mut bytes = serde_json::to_vec(&header)?;
        bytes.push(b'\n');
        bytes.reserve(self.anchors.len() * 4);
        for v in self.anchors.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        writer
            .write_all(&bytes)
            .map_err(|e| Error::io("<space writer>", e))
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut line = Vec::new();
        reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io("<space reader>", e))?;
        let header: SpaceHeader = serde_json::from_slice(&line)?;
        if header.layout != LAYOUT {
            return Err(Error::Input(format!(
                "unsupported anchor layout {:?}",
                header.layout
            )));
        }
        check_shape(header.n_anchors, header.dim)?;
        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| Error::io("<space reader>", e))?;
        let expected = header.n_anchors * header.dim * 4;
        if payload.len() != expected {
            return Err(Error::Shape(format!(
                "anchor payload has {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let anchors = Array2::from_shape_vec((header.n_anchors, header.dim), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        TemporalTokenSpace::from_anchors(anchors, header.rng_seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        self.write_to(&mut writer)?;
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }

    fn token_row(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.n_anchors() {
            return Err(Error::Index(format!(
                "token <{k}> outside 1..={}",
                self.n_anchors()
            )));
        }
        Ok(k - 1)
    }

    fn check_width(&self, width: usize, what: &str) -> Result<()> {
        if width != self.dim() {
            return Err(Error::Shape(format!(
                "{what} has width {width}, space has dim {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

fn check_shape(n_anchors: usize, dim: usize) -> Result<()> {
    if n_anchors < 2 {
        return Err(Error::Input(format!(
            "need at least two anchors, got {n_anchors}"
        )));
    }
    if dim == 0 {
        return Err(Error::Input("embedding dim must be positive".into()));
    }
    Ok(())
}

/// Inclusive uniform sampling times `i/(M-1)` for `M` frames.
pub fn uniform_frame_times(m: usize) -> Vec<NormalizedTime> {
    match m {
        0 => Vec::new(),
        1 => vec![NormalizedTime::START],
        _ => (0..m)
            .map(|i| {
                if i == m - 1 {
                    NormalizedTime::END
                } else {
                    NormalizedTime(i as f64 / (m - 1) as f64)
                }
            })
            .collect(),
    }
}
