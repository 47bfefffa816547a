//! Mixing time of walks toward the sink: exact computation, forward-move
//! bound arithmetic, and the Monte-Carlo hitting-time proxy over attention.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attngraph::{check_convex, Orientation, TransitionMatrix};
use crate::error::{Error, Result};
use crate::numerics::{matmul, Matrix, RngStream};
use crate::record::{check_uniform, AttentionRecord};
use crate::stats::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Average hitting time over start positions.
    #[default]
    Mean,
    /// Worst start position.
    Max,
}

/// Where the column normalization happens when heads are merged into a walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardNormalization {
    #[default]
    CombineThenNormalize,
    NormalizeThenCombine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingConfig {
    pub epsilon: f64,
    pub t_max: usize,
    pub simulations: usize,
    pub max_steps: usize,
    pub aggregation: Aggregation,
    pub normalization: ForwardNormalization,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            t_max: 10_000,
            simulations: 500,
            max_steps: 100,
            aggregation: Aggregation::Mean,
            normalization: ForwardNormalization::CombineThenNormalize,
        }
    }
}

impl MixingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::contract("epsilon must lie in (0, 1)"));
        }
        if self.simulations == 0 || self.max_steps == 0 {
            return Err(Error::contract("simulations and max_steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MixingTime {
    Mixed(usize),
    NotMixed,
}

impl MixingTime {
    pub fn steps(self) -> Option<usize> {
        match self {
            MixingTime::Mixed(t) => Some(t),
            MixingTime::NotMixed => None,
        }
    }
}

/// `min { t : max_j TV(W^t e_j, 1_τ) ≤ ε }`, or `NotMixed` past `t_max`.
pub fn exact_mixing_time(w: &TransitionMatrix, cfg: &MixingConfig) -> Result<MixingTime> {
    w.expect(Orientation::Walk)?;
    cfg.validate()?;
    let n = w.n();
    let sink = n - 1;
    // TV distance of a distribution to the sink point mass is 1 - mass at sink
    let worst = |p: &Matrix| (0..n).map(|j| 1.0 - p.get(sink, j)).fold(0.0, f64::max);
    let mut power = Matrix::identity(n).with_precision(w.matrix().precision());
    for t in 0..=cfg.t_max {
        if t > 0 {
            power = matmul(w.matrix(), &power)?;
        }
        if worst(&power) <= cfg.epsilon {
            return Ok(MixingTime::Mixed(t));
        }
    }
    Ok(MixingTime::NotMixed)
}

/// Per-head lower bounds on the chance of a forward move, with convex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardProfile {
    probabilities: Vec<f64>,
    weights: Vec<f64>,
}

impl ForwardProfile {
    pub fn new(probabilities: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() || probabilities.len() != weights.len() {
            return Err(Error::dims("one weight per head probability"));
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::contract("forward probabilities must lie in [0, 1]"));
        }
        check_convex(&weights)?;
        Ok(Self {
            probabilities,
            weights,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `p* = max_h p_h`.
    pub fn best(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn worst(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::MAX, f64::min)
    }

    /// Forward moves needed from the leftmost vertex of an `n`-vertex graph.
    pub fn forward_moves(n: usize) -> usize {
        n.saturating_sub(1)
    }
}

/// `p = Σ α_h p_h`.
pub fn effective_forward_probability(fp: &ForwardProfile) -> f64 {
    fp.probabilities
        .iter()
        .zip(&fp.weights)
        .map(|(p, a)| p * a)
        .sum()
}

/// `2 (n − 1) / p`.
pub fn mixing_bound(n: usize, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::contract("mixing bound needs a positive forward probability"));
    }
    Ok(2.0 * ForwardProfile::forward_moves(n) as f64 / p)
}

/// `exp(−p (n − 1))`, the Hoeffding tail for falling short of `n − 1` forward moves.
pub fn hoeffding_tail(p: f64, n: usize) -> f64 {
    (-p * ForwardProfile::forward_moves(n) as f64).exp()
}

/// `1 − F^H`: chance that at least one of `h` i.i.d. heads clears the threshold.
pub fn best_head_exceedance(cdf_at_threshold: f64, h: u32) -> f64 {
    1.0 - cdf_at_threshold.powi(h as i32)
}

/// Uniform per-step forward certificate: smallest non-self mass over non-sink columns.
pub fn certified_forward_probability(w: &TransitionMatrix) -> Result<f64> {
    w.expect(Orientation::Walk)?;
    let n = w.n();
    Ok((0..n.saturating_sub(1))
        .map(|j| 1.0 - w.matrix().get(j, j))
        .fold(1.0, f64::min))
}

fn column_normalize(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let sums = m.col_sums();
    if let Some(j) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::contract(format!("attention column {j} carries no mass")));
    }
    let data = (0..n * n).map(|k| m.as_slice()[k] / sums[k % n]).collect();
    Matrix::from_vec(n, n, data)
}

/// Forward walk over positions built from one layer's attention.
///
/// Column `j` holds how strongly each later position `i ≥ j` attends to `j`,
/// normalized into a distribution over successors. The last position only
/// attends into itself within its column, so it is absorbing.
pub fn forward_transition_from_attention(
    attn: &AttentionRecord,
    normalization: ForwardNormalization,
) -> Result<TransitionMatrix> {
    if !attn.is_causal() {
        return Err(Error::contract("forward walk needs causal attention"));
    }
    let walk = match normalization {
        ForwardNormalization::CombineThenNormalize => column_normalize(&attn.combined())?,
        ForwardNormalization::NormalizeThenCombine => {
            let n = attn.n();
            let mut acc = vec![0.0; n * n];
            for (h, &w) in attn.head_weights().iter().enumerate() {
                let head = column_normalize(&attn.head_matrix(h))?;
                for (a, x) in acc.iter_mut().zip(head.as_slice()) {
                    *a += w * x;
                }
            }
            Matrix::from_vec(n, n, acc)?
        }
    };
    TransitionMatrix::new(walk, Orientation::Walk)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    /// Mean hitting time from each start, over samples and simulations.
    pub per_start_mean: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    /// Spread across samples of the per-sample aggregated value.
    pub std: f64,
    pub censored_fraction: f64,
    pub samples: usize,
    pub aggregation: Aggregation,
}

impl MixingEstimate {
    /// The headline value under the configured aggregation.
    pub fn value(&self) -> f64 {
        match self.aggregation {
            Aggregation::Mean => self.mean,
            Aggregation::Max => self.max,
        }
    }
}

/// Cumulative column weights of a walk matrix, for inverse-CDF stepping.
struct ColumnSampler {
    n: usize,
    /// `cdf[j*n + k]` is the running sum of column `j` over rows `0..=k`.
    cdf: Vec<f64>,
}

impl ColumnSampler {
    fn new(w: &Matrix) -> Self {
        let n = w.rows();
        let mut cdf = vec![0.0; n * n];
        for j in 0..n {
            let mut cum = 0.0;
            for k in 0..n {
                cum += w.get(k, j);
                cdf[j * n + k] = cum;
            }
        }
        Self { n, cdf }
    }

    /// Same draw as `sample_categorical` on column `j` given the same uniform.
    #[inline]
    fn step(&self, j: usize, u: f64) -> usize {
        let col = &self.cdf[j * self.n..(j + 1) * self.n];
        let target = u * col[self.n - 1];
        col.partition_point(|&c| c <= target).min(self.n - 1)
    }
}

struct SampleWalks {
    per_start: Vec<f64>,
    censored: usize,
}

fn simulate_sample(
    b: usize,
    w: &Matrix,
    cfg: &MixingConfig,
    seed: u64,
) -> SampleWalks {
    let n = w.rows();
    let sampler = ColumnSampler::new(w);
    let mut per_start = vec![0.0; n];
    let mut censored = 0;
    for (start, slot) in per_start.iter_mut().enumerate() {
        let mut total = 0usize;
        for s in 0..cfg.simulations {
            let mut rng = RngStream::derive(seed, &[b as u64, start as u64, s as u64]);
            let mut j = start;
            let mut t = 0;
            while j != n - 1 && t < cfg.max_steps {
                j = sampler.step(j, rng.uniform());
                t += 1;
            }
            if j != n - 1 {
                censored += 1;
            }
            total += t;
        }
        *slot = total as f64 / cfg.simulations as f64;
    }
    SampleWalks {
        per_start,
        censored,
    }
}

/// Monte-Carlo hitting time to the last position, averaged over the dataset.
///
/// Walk `(b, start, s)` draws from its own random stream, so the result does
/// not depend on how samples are scheduled across threads.
pub fn mc_hitting_proxy(
    dataset_attn: &[AttentionRecord],
    cfg: &MixingConfig,
    seed: u64,
) -> Result<MixingEstimate> {
    cfg.validate()?;
    let (n, _) = check_uniform(dataset_attn)?;
    let walks: Vec<Matrix> = dataset_attn
        .iter()
        .map(|r| forward_transition_from_attention(r, cfg.normalization).map(TransitionMatrix::into_matrix))
        .collect::<Result<_>>()?;

    #[cfg(feature = "parallel")]
    let iter = walks.par_iter().enumerate();
    #[cfg(not(feature = "parallel"))]
    let iter = walks.iter().enumerate();
    let results: Vec<SampleWalks> = iter.map(|(b, w)| simulate_sample(b, w, cfg, seed)).collect();

    let count = results.len();
    let mut per_start_mean = vec![0.0; n];
    let mut per_sample = Vec::with_capacity(count);
    let mut censored = 0usize;
    for r in &results {
        for (acc, v) in per_start_mean.iter_mut().zip(&r.per_start) {
            *acc += v;
        }
        censored += r.censored;
        per_sample.push(match cfg.aggregation {
            Aggregation::Mean => r.per_start.iter().sum::<f64>() / n as f64,
            Aggregation::Max => r.per_start.iter().copied().fold(0.0, f64::max),
        });
    }
    for v in &mut per_start_mean {
        *v /= count as f64;
    }
    let (_, std) = mean_std(&per_sample);
    Ok(MixingEstimate {
        mean: per_start_mean.iter().sum::<f64>() / n as f64,
        max: per_start_mean.iter().copied().fold(0.0, f64::max),
        per_start_mean,
        std,
        censored_fraction: censored as f64 / (count * n * cfg.simulations) as f64,
        samples: count,
        aggregation: cfg.aggregation,
    })
}
