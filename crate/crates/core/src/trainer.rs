//! Desk-scale descent experiments on the anchor table.
//!
//! A subset of tokens is pulled toward fixed targets with full-batch
//! gradient descent. With propagation disabled the unsupervised anchors have
//! no gradient path and never move; with neighboring propagation every
//! update leaks into nearby anchors with exponentially decaying weight,
//! which is what makes the learned curve continuous.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal_space::{Propagation, TemporalTokenSpace};
use crate::vecmath;

const RANDOM_PAIRS: usize = 1000;
const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITERS: usize = 10_000;
const PCA_START_SEED: u64 = 0x9ca1;
/// Mixed into the training seed so pair sampling uses its own stream.
const PAIR_STREAM: u64 = 0x7061_6972;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_anchors: usize,
    pub dim: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// 1-based token indices that receive a target.
    pub supervised_indices: Vec<usize>,
    /// One row per supervised index, in the same order.
    pub targets: Array2<f64>,
    pub propagation: Propagation,
    pub rng_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_anchors < 2 || self.dim == 0 {
            return Err(Error::Input(format!(
                "invalid space shape {}x{}",
                self.n_anchors, self.dim
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Input(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(&k) = self
            .supervised_indices
            .iter()
            .find(|&&k| k == 0 || k > self.n_anchors)
        {
            return Err(Error::Index(format!(
                "supervised token <{k}> outside 1..={}",
                self.n_anchors
            )));
        }
        let mut sorted = self.supervised_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.supervised_indices.len() {
            return Err(Error::Input("supervised indices must be distinct".into()));
        }
        if self.targets.nrows() != self.supervised_indices.len() || self.targets.ncols() != self.dim
        {
            return Err(Error::Shape(format!(
                "targets are {}x{}, expected {}x{}",
                self.targets.nrows(),
                self.targets.ncols(),
                self.supervised_indices.len(),
                self.dim
            )));
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("targets must be finite".into()));
        }
        Ok(())
    }
}

/// Shape of the target rows used by the continuity experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetShape {
    /// Low-frequency sinusoids over normalized time; achievable continuity.
    #[default]
    Sinusoidal,
    /// Independent Gaussian rows; a stress setting with no smooth solution.
    Random,
}

/// Serializable knobs of the continuity experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuitySettings {
    pub n_anchors: usize,
    pub dim: usize,
    /// Every `stride`-th token (starting at `<1>`) is supervised.
    pub stride: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub targets: TargetShape,
    pub propagation: Propagation,
}

impl Default for ContinuitySettings {
    fn default() -> Self {
        ContinuitySettings {
            n_anchors: 64,
            dim: 16,
            stride: 8,
            steps: 500,
            learning_rate: 0.1,
            rng_seed: 7,
            targets: TargetShape::Sinusoidal,
            propagation: Propagation::Neighboring,
        }
    }
}

impl ContinuitySettings {
    pub fn train_config(&self) -> Result<TrainConfig> {
        if self.stride == 0 {
            return Err(Error::Input("stride must be positive".into()));
        }
        let supervised: Vec<usize> = (1..=self.n_anchors).step_by(self.stride).collect();
        let targets = match self.targets {
            TargetShape::Sinusoidal => sinusoidal_targets(&supervised, self.n_anchors, self.dim),
            TargetShape::Random => random_targets(supervised.len(), self.dim, self.rng_seed),
        };
        let config = TrainConfig {
            n_anchors: self.n_anchors,
            dim: self.dim,
            learning_rate: self.learning_rate,
            steps: self.steps,
            supervised_indices: supervised,
            targets,
            propagation: self.propagation,
            rng_seed: self.rng_seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Target for token `<k>` at time `tau`: dimension `j` follows
/// `cos(pi * tau * f_j + phi_j)` with half-period counts `f_j` in
/// `{0.5, 1.0, 1.5}` and phases spread over the circle.
pub fn sinusoidal_targets(indices: &[usize], n_anchors: usize, dim: usize) -> Array2<f64> {
    let span = (n_anchors.max(2) - 1) as f64;
    Array2::from_shape_fn((indices.len(), dim), |(r, j)| {
        let tau = (indices[r] - 1) as f64 / span;
        let freq = 0.5 * (1 + j % 3) as f64;
        let phase = std::f64::consts::TAU * j as f64 / dim as f64;
        (std::f64::consts::PI * tau * freq + phase).cos()
    })
}

pub fn random_targets(rows: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a72_6765);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_simple_fn((rows, dim), || normal.sample(&mut rng))
}

#[derive(Debug, Clone)]
pub struct TrainedAnchors {
    pub space: TemporalTokenSpace,
    /// Loss before each of the `steps` updates.
    pub loss_curve: Vec<f64>,
}

/// Minimises `sum_k ||ntp_forward(k) - target_k||^2` by plain gradient descent.
pub fn train_anchors(config: &TrainConfig) -> Result<TrainedAnchors> {
    config.validate()?;
    let mut space = TemporalTokenSpace::new(config.n_anchors, config.dim, config.rng_seed)?;
    let mut loss_curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (loss, grads) = loss_and_gradient(&space, config)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        loss_curve.push(loss);
        space.apply_gradients(&grads, config.learning_rate)?;
    }
    let (final_loss, _) = loss_and_gradient(&space, config)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: config.steps,
            loss: final_loss,
        });
    }
    Ok(TrainedAnchors { space, loss_curve })
}

fn loss_and_gradient(
    space: &TemporalTokenSpace,
    config: &TrainConfig,
) -> Result<(f64, Array2<f64>)> {
    let mut loss = 0.0;
    let mut grads = Array2::zeros((config.n_anchors, config.dim));
    for (&k, target) in config
        .supervised_indices
        .iter()
        .zip(config.targets.outer_iter())
    {
        let residual = &space.ntp_forward(k)? - &target;
        loss += residual.dot(&residual);
        let upstream = &residual * 2.0;
        let g = space.grad_at_anchor(k, upstream.view(), config.propagation)?;
        grads += &g.grads;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub adjacent_mean_cos: f64,
    pub random_mean_cos: f64,
    pub pca1_spearman: f64,
    pub unsupervised_displacement: f64,
}

impl ContinuityReport {
    /// Adjacent-minus-random cosine gap.
    pub fn cosine_gap(&self) -> f64 {
        self.adjacent_mean_cos - self.random_mean_cos
    }
}

#[derive(Debug, Clone)]
pub struct ContinuityArm {
    pub propagation: Propagation,
    pub report: ContinuityReport,
    pub pca_scores: Array1<f64>,
    pub loss_curve: Vec<f64>,
    pub space: TemporalTokenSpace,
}

impl ContinuityArm {
    /// `index,pca1` with 1-based token indices.
    pub fn pca_csv(&self) -> String {
        let mut out = String::from("index,pca1\n");
        for (i, score) in self.pca_scores.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, score));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ContinuityOutcome {
    pub with_ntp: ContinuityArm,
    pub without_ntp: ContinuityArm,
}

/// Trains the same configuration with and without propagation and reports
/// continuity statistics for both anchor tables.
pub fn continuity_experiment(base: &TrainConfig) -> Result<ContinuityOutcome> {
    base.validate()?;
    if base.n_anchors < 3 {
        return Err(Error::Input(
            "continuity needs at least three anchors for non-adjacent pairs".into(),
        ));
    }
    let ntp = if base.propagation.is_enabled() {
        base.propagation
    } else {
        Propagation::Neighboring
    };
    let (with_ntp, without_ntp) = std::thread::scope(|scope| {
        let a = scope.spawn(|| run_arm(base, ntp));
        let b = run_arm(base, Propagation::Disabled);
        (a.join().expect("continuity arm panicked"), b)
    });
    Ok(ContinuityOutcome {
        with_ntp: with_ntp?,
        without_ntp: without_ntp?,
    })
}

fn run_arm(base: &TrainConfig, propagation: Propagation) -> Result<ContinuityArm> {
    let config = TrainConfig {
        propagation,
        ..base.clone()
    };
    let initial = TemporalTokenSpace::new(config.n_anchors, config.dim, config.rng_seed)?;
    let trained = train_anchors(&config)?;
    let (report, pca_scores) = continuity_report(
        &initial,
        &trained.space,
        &config.supervised_indices,
        config.rng_seed,
    )?;
    Ok(ContinuityArm {
        propagation,
        report,
        pca_scores,
        loss_curve: trained.loss_curve,
        space: trained.space,
    })
}

/// Continuity statistics of `trained`, with displacement measured from
/// `initial`. Also returns the first-principal-component score per anchor.
pub fn continuity_report(
    initial: &TemporalTokenSpace,
    trained: &TemporalTokenSpace,
    supervised_indices: &[usize],
    seed: u64,
) -> Result<(ContinuityReport, Array1<f64>)> {
    let anchors = trained.anchors();
    let n = anchors.nrows();
    if n < 3 {
        return Err(Error::Input("need at least three anchors".into()));
    }
    let rows: Vec<Vec<f64>> = anchors.outer_iter().map(|r| r.to_vec()).collect();
    let cos = |i: usize, j: usize| vecmath::cosine(&rows[i], &rows[j]).unwrap_or(0.0);

    let adjacent_mean_cos = (0..n - 1).map(|i| cos(i, i + 1)).sum::<f64>() / (n - 1) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PAIR_STREAM);
    let mut total = 0.0;
    let mut drawn = 0;
    while drawn < RANDOM_PAIRS {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i.abs_diff(j) < 2 {
            continue;
        }
        total += cos(i, j);
        drawn += 1;
    }
    let random_mean_cos = total / RANDOM_PAIRS as f64;

    let pca = pca_first_component(anchors)?;
    let index: Vec<f64> = (1..=n).map(|k| k as f64).collect();
    let pca1_spearman = spearman(&index, pca.scores.as_slice().expect("contiguous")).abs();

    let unsupervised_displacement = (1..=n)
        .filter(|k| !supervised_indices.contains(k))
        .map(|k| {
            let moved = &trained.anchors().row(k - 1) - &initial.anchors().row(k - 1);
            moved.dot(&moved).sqrt()
        })
        .fold(0.0, f64::max);

    Ok((
        ContinuityReport {
            adjacent_mean_cos,
            random_mean_cos,
            pca1_spearman,
            unsupervised_displacement,
        },
        pca.scores,
    ))
}

#[derive(Debug, Clone)]
pub struct FirstComponent {
    pub scores: Array1<f64>,
    pub component: Array1<f64>,
}

/// First principal component by power iteration on the covariance matrix.
pub fn pca_first_component(matrix: ArrayView2<'_, f64>) -> Result<FirstComponent> {
    let n = matrix.nrows();
    if n < 2 {
        return Err(Error::Input(format!(
            "PCA needs at least two rows, got {n}"
        )));
    }
    let mean = matrix.mean_axis(Axis(0)).expect("non-empty");
    let centered = &matrix - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    if cov.diag().iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all rows are identical".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(PCA_START_SEED);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v: Array1<f64> = Array1::from_shape_simple_fn(cov.nrows(), || normal.sample(&mut rng));
    v /= v.dot(&v).sqrt();
    for _ in 0..PCA_MAX_ITERS {
        let mut w = cov.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(
                "power iteration collapsed to zero".into(),
            ));
        }
        w /= norm;
        let change = (&w - &v).mapv(|d| d * d).sum().sqrt();
        v = w;
        if change < PCA_TOL {
            break;
        }
    }

    let pivot = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |best, (i, &x)| {
            if x.abs() > best.1.abs() {
                (i, x)
            } else {
                best
            }
        })
        .1;
    if pivot < 0.0 {
        v.mapv_inplace(|x| -x);
    }
    let scores = centered.dot(&v);
    Ok(FirstComponent {
        scores,
        component: v,
    })
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs must have equal length");
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_target_config(
        n: usize,
        k: usize,
        lr: f64,
        steps: usize,
        prop: Propagation,
    ) -> TrainConfig {
        TrainConfig {
            n_anchors: n,
            dim: 3,
            learning_rate: lr,
            steps,
            supervised_indices: vec![k],
            targets: array![[0.3, -0.2, 0.1]],
            propagation: prop,
            rng_seed: 11,
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = single_target_config(8, 3, 0.1, 1, Propagation::Neighboring);
        c.supervised_indices = vec![9];
        assert!(matches!(train_anchors(&c), Err(Error::Index(_))));
        let mut c = single_target_config(8, 3, 0.0, 1, Propagation::Neighboring);
        assert!(train_anchors(&c).is_err());
        c.learning_rate = 0.1;
        c.targets = Array2::zeros((2, 3));
        assert!(matches!(train_anchors(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn fixed_point_when_targets_equal_anchors() {
        let init = TemporalTokenSpace::new(6, 3, 11).unwrap();
        let config = TrainConfig {
            n_anchors: 6,
            dim: 3,
            learning_rate: 0.1,
            steps: 4,
            supervised_indices: (1..=6).collect(),
            targets: init.anchors().to_owned(),
            propagation: Propagation::Neighboring,
            rng_seed: 11,
        };
        let out = train_anchors(&config).unwrap();
        assert_eq!(out.loss_curve[0], 0.0);
        assert_eq!(out.space.anchors(), init.anchors());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let c = single_target_config(8, 4, 1e200, 50, Propagation::Neighboring);
        match train_anchors(&c) {
            Err(Error::Diverged { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn pca_rank_one_data() {
        let m = Array2::from_shape_fn((6, 3), |(i, j)| if j == 0 { (i + 1) as f64 } else { 0.0 });
        let pca = pca_first_component(m.view()).unwrap();
        assert!((pca.component[0] - 1.0).abs() < 1e-12);
        assert!(pca.component[1].abs() < 1e-12 && pca.component[2].abs() < 1e-12);
        for (i, s) in pca.scores.iter().enumerate() {
            assert!((s - (i as f64 + 1.0 - 3.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_identical_rows_is_degenerate() {
        let m = Array2::from_elem((4, 3), 0.7);
        assert!(matches!(
            pca_first_component(m.view()),
            Err(Error::Degenerate(_))
        ));
        assert!(pca_first_component(Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn spearman_handles_ties_and_constants() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn default_settings_produce_every_eighth_token() {
        let c = ContinuitySettings::default().train_config().unwrap();
        assert_eq!(c.supervised_indices, vec![1, 9, 17, 25, 33, 41, 49, 57]);
        assert_eq!(c.targets.dim(), (8, 16));
    }

    #[test]
    fn csv_has_one_row_per_anchor() {
        let s = ContinuitySettings {
            steps: 2,
            ..Default::default()
        };
        let out = continuity_experiment(&s.train_config().unwrap()).unwrap();
        let csv = out.with_ntp.pca_csv();
        assert!(csv.starts_with("index,pca1\n1,"));
        assert_eq!(csv.lines().count(), 65);
    }
}
