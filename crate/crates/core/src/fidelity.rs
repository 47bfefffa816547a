//! Signal-at-sink diffusion and minimax fidelity, for single heads, weighted
//! head combinations, and whole attention datasets.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attngraph::{combine_heads, HeadSystem, Orientation, TransitionMatrix};
use crate::error::{Error, Result};
use crate::numerics::{matmul, Matrix};
use crate::record::{check_uniform, AttentionRecord};
use crate::stats::mean_std;

pub const DEFAULT_HORIZON: usize = 100;

/// Row `τ` of `Δ^t`: how much of each origin's signal sits at the sink after `t` steps.
pub fn signal_at_sink(d: &TransitionMatrix, t: usize) -> Result<Vec<f64>> {
    d.expect(Orientation::Diffusion)?;
    let n = d.n();
    let mut row = vec![0.0; n];
    row[n - 1] = 1.0;
    for _ in 0..t {
        row = d.matrix().left_mul_row(&row)?;
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityProfile {
    /// Peak signal each node delivers to the sink over `t ∈ [0, horizon]`.
    pub peaks: Vec<f64>,
    /// Earliest time each peak is attained.
    pub peak_times: Vec<usize>,
    pub minimax: f64,
    pub argmin: usize,
    pub horizon: usize,
}

/// Peaks of row `n-1` of `m^t` for `t = 0..=horizon`. No orientation check.
fn sink_row_peaks(m: &Matrix, horizon: usize) -> Result<FidelityProfile> {
    let n = m.rows();
    let mut row = vec![0.0; n];
    row[n - 1] = 1.0;
    let mut peaks = row.clone();
    let mut peak_times = vec![0; n];
    for t in 1..=horizon {
        row = m.left_mul_row(&row)?;
        for ((p, pt), &x) in peaks.iter_mut().zip(peak_times.iter_mut()).zip(&row) {
            if x > *p {
                *p = x;
                *pt = t;
            }
        }
    }
    let (argmin, minimax) = peaks
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, v)| if v < best.1 { (j, v) } else { best });
    Ok(FidelityProfile {
        peaks,
        peak_times,
        minimax,
        argmin,
        horizon,
    })
}

/// `(φ_j, t_j)`: peak signal node `j` delivers to the sink and when (earliest on ties).
pub fn node_fidelity(d: &TransitionMatrix, j: usize, horizon: usize) -> Result<(f64, usize)> {
    if j >= d.n() {
        return Err(Error::contract(format!("node {j} outside 0..{}", d.n())));
    }
    let p = minimax_fidelity(d, horizon)?;
    Ok((p.peaks[j], p.peak_times[j]))
}

/// Node fidelities and their minimum.
pub fn minimax_fidelity(d: &TransitionMatrix, horizon: usize) -> Result<FidelityProfile> {
    d.expect(Orientation::Diffusion)?;
    sink_row_peaks(d.matrix(), horizon)
}

/// `‖(Σ β_h Δ^(h))^t − Σ_{h_1..h_t} (Π β) Δ^(h_1)⋯Δ^(h_t)‖`, largest absolute entry.
pub fn multi_head_power_expansion_check(heads: &HeadSystem, t: usize) -> Result<f64> {
    let combined = combine_heads(heads)?.matrix().power(t)?;
    let h = heads.heads().len();
    let n = heads.n();
    let mut expansion = Matrix::zeros(n, n).with_precision(combined.precision());
    let mut seq = vec![0usize; t];
    for code in 0..h.pow(t as u32) {
        let mut c = code;
        for slot in seq.iter_mut() {
            *slot = c % h;
            c /= h;
        }
        let mut prod = Matrix::identity(n).with_precision(combined.precision());
        let mut weight = 1.0;
        for &k in &seq {
            prod = matmul(&prod, heads.heads()[k].matrix())?;
            weight *= heads.weights()[k];
        }
        expansion = expansion.add(&prod.scaled(weight))?;
    }
    combined.max_abs_diff(&expansion)
}

/// How the combined operator is read off a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityForm {
    /// `Δ̄ = Σ w_h A^(h)`, signal read from row `τ` of `Δ̄^m`.
    #[default]
    RowSum,
    /// `P = Σ w_h (A^(h))ᵀ`, row `τ` of `P^m`.
    Transposed,
}

fn operator(m: Matrix, form: FidelityForm) -> Matrix {
    match form {
        FidelityForm::RowSum => m,
        FidelityForm::Transposed => m.transpose(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub mean: f64,
    pub std: f64,
    pub per_sample: Vec<f64>,
}

fn map_records<F>(records: &[AttentionRecord], f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&AttentionRecord) -> Result<Vec<f64>> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let out = records.par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    let out = records.iter().map(f).collect();
    out
}

/// Dataset mean and spread of the combined-operator minimax fidelity.
pub fn dataset_fidelity_proxy(
    dataset_attn: &[AttentionRecord],
    horizon: usize,
    form: FidelityForm,
) -> Result<FidelitySummary> {
    check_uniform(dataset_attn)?;
    let per_sample: Vec<f64> = map_records(dataset_attn, |r| {
        Ok(vec![sink_row_peaks(&operator(r.combined(), form), horizon)?.minimax])
    })?
    .into_iter()
    .flatten()
    .collect();
    let (mean, std) = mean_std(&per_sample);
    Ok(FidelitySummary {
        mean,
        std,
        per_sample,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadComparison {
    /// Dataset-mean minimax fidelity of each head on its own.
    pub per_head: Vec<f64>,
    pub per_head_std: Vec<f64>,
    pub best_head: usize,
    pub best: f64,
    pub combined: f64,
    pub combined_std: f64,
    pub synergy: bool,
}

impl HeadComparison {
    pub fn best_std(&self) -> f64 {
        self.per_head_std[self.best_head]
    }

    fn from_values(per_head: Vec<f64>, per_head_std: Vec<f64>, combined: f64, combined_std: f64) -> Self {
        let (best_head, best) = per_head
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (h, v)| if v > b.1 { (h, v) } else { b });
        Self {
            per_head,
            per_head_std,
            best_head,
            best,
            combined,
            combined_std,
            synergy: combined > best,
        }
    }
}

/// Minimax fidelity of every head alone against the learned-weight combination.
pub fn per_head_vs_combined(
    dataset_attn: &[AttentionRecord],
    horizon: usize,
    form: FidelityForm,
) -> Result<HeadComparison> {
    let (_, heads) = check_uniform(dataset_attn)?;
    let rows = map_records(dataset_attn, |r| {
        let mut v = Vec::with_capacity(heads + 1);
        for h in 0..heads {
            v.push(sink_row_peaks(&operator(r.head_matrix(h), form), horizon)?.minimax);
        }
        v.push(sink_row_peaks(&operator(r.combined(), form), horizon)?.minimax);
        Ok(v)
    })?;
    let (per_head, per_head_std) = (0..heads)
        .map(|h| mean_std(&rows.iter().map(|r| r[h]).collect::<Vec<_>>()))
        .unzip();
    let combined: Vec<f64> = rows.iter().map(|r| r[heads]).collect();
    let (mean, std) = mean_std(&combined);
    Ok(HeadComparison::from_values(per_head, per_head_std, mean, std))
}

/// Same comparison for a handcrafted head system.
pub fn compare_head_system(hs: &HeadSystem, horizon: usize) -> Result<HeadComparison> {
    let per_head = hs
        .heads()
        .iter()
        .map(|h| minimax_fidelity(h, horizon).map(|p| p.minimax))
        .collect::<Result<Vec<_>>>()?;
    let combined = minimax_fidelity(&combine_heads(hs)?, horizon)?.minimax;
    let zeros = vec![0.0; per_head.len()];
    Ok(HeadComparison::from_values(per_head, zeros, combined, 0.0))
}
