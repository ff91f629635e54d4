//! Finite-difference check of the anchor gradients.
//!
//! The reference is built from the forward definition alone. A token's
//! embedding is `live + adj(A) - StopGrad(adj(A))`, where `live` is the token
//! itself or, for the ablation, its detached copy. With the detached terms
//! frozen at the starting anchors `A0`, the scalar loss `upstream · e(tau)`
//! changes by
//!
//! `D(A) = sum_j upstream_j sum_k c_k sum_i v(i,k) (A[i,j] - A0[i,j])`
//!
//! where `c_k` are the interpolation coefficients and `v` the live weights.
//! Differencing `D` directly, instead of the full loss, keeps anchors far
//! from `tau` (weights near `2^-N`) resolvable to full relative precision.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::temporal_space::{NormalizedTime, Propagation, TemporalTokenSpace};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Interpolation coefficients `(row, share)` for `tau` on `n` anchors.
/// Positions within a few ulps of an anchor count as that anchor, as in the
/// forward pass.
fn coefficients(n: usize, tau: f64) -> Vec<(usize, f64)> {
    let mut p = tau * (n - 1) as f64;
    let nearest = p.round();
    if (p - nearest).abs() <= 4.0 * f64::EPSILON * nearest.max(1.0) {
        p = nearest;
    }
    let a = (p.floor() as usize).min(n - 2);
    let f = p - a as f64;
    vec![(a, 1.0 - f), (a + 1, f)]
}

/// Weight with which anchor `i` enters token `k` on the differentiable path.
fn live_weight(propagation: Propagation, i: usize, k: usize) -> f64 {
    let identity = if i == k { 1.0 } else { 0.0 };
    let adjacency = 2f64.powi(-(i.abs_diff(k) as i32));
    match propagation {
        Propagation::Disabled => identity,
        Propagation::Neighboring => identity + adjacency,
        Propagation::NeighboringWithoutSelf => adjacency,
    }
}

fn loss_change(
    anchors: &Array2<f64>,
    frozen: &Array2<f64>,
    tau: f64,
    upstream: ArrayView1<'_, f64>,
    propagation: Propagation,
) -> f64 {
    let n = anchors.nrows();
    let coeffs = coefficients(n, tau);
    let mut total = 0.0;
    for ((i, j), &value) in anchors.indexed_iter() {
        let delta = value - frozen[[i, j]];
        if delta == 0.0 {
            continue;
        }
        let weight: f64 = coeffs
            .iter()
            .map(|&(k, c)| c * live_weight(propagation, i, k))
            .sum();
        total += upstream[j] * weight * delta;
    }
    total
}

/// Central differences of the frozen-StopGrad loss over every anchor entry.
pub fn finite_difference_gradient(
    space: &TemporalTokenSpace,
    tau: NormalizedTime,
    upstream: ArrayView1<'_, f64>,
    propagation: Propagation,
    step: f64,
) -> Array2<f64> {
    let frozen = space.anchors().to_owned();
    let mut probe = frozen.clone();
    let mut grad = Array2::zeros(frozen.raw_dim());
    for i in 0..frozen.nrows() {
        for j in 0..frozen.ncols() {
            let base = frozen[[i, j]];
            let plus = base + step;
            let minus = base - step;
            probe[[i, j]] = plus;
            let up = loss_change(&probe, &frozen, tau.value(), upstream, propagation);
            probe[[i, j]] = minus;
            let down = loss_change(&probe, &frozen, tau.value(), upstream, propagation);
            probe[[i, j]] = base;
            grad[[i, j]] = (up - down) / (plus - minus);
        }
    }
    grad
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub n_anchors: usize,
    pub dim: usize,
    pub tau: f64,
    pub propagation: Propagation,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub passed: bool,
    pub cases: Vec<GradCheckCase>,
}

pub fn check_case(
    space: &TemporalTokenSpace,
    tau: NormalizedTime,
    upstream: ArrayView1<'_, f64>,
    propagation: Propagation,
) -> Result<f64> {
    let analytic = space.grad_wrt_anchors(tau, upstream, propagation)?.grads;
    let numeric = finite_difference_gradient(space, tau, upstream, propagation, DEFAULT_STEP);
    Ok(analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max))
}

/// Random spaces of 2..=64 anchors and width 1..=8, cycling through the
/// propagation modes. Every fifth case lands exactly on an anchor time and
/// the first two hit the endpoints.
pub fn run_suite(n_cases: usize, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = [
        Propagation::Neighboring,
        Propagation::NeighboringWithoutSelf,
        Propagation::Disabled,
    ];
    let mut cases = Vec::with_capacity(n_cases);
    for c in 0..n_cases {
        let n = rng.random_range(2..=64);
        let dim = rng.random_range(1..=8);
        let space = TemporalTokenSpace::new(n, dim, rng.random())?;
        let tau = match c {
            0 => 0.0,
            1 => 1.0,
            _ if c % 5 == 0 => rng.random_range(0..n) as f64 / (n - 1) as f64,
            _ => rng.random::<f64>(),
        };
        let tau = NormalizedTime::new(tau)?;
        let upstream: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let propagation = modes[c % modes.len()];
        let err = check_case(&space, tau, upstream.view(), propagation)?;
        cases.push(GradCheckCase {
            n_anchors: n,
            dim,
            tau: tau.value(),
            propagation,
            max_relative_error: err,
        });
    }
    let max_relative_error = cases
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        seed,
        tolerance,
        max_relative_error,
        passed: max_relative_error <= tolerance,
        cases,
    })
}
