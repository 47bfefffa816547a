//! Dense matrices, probability vectors and addressable random streams.
//!
//! Everything here is value-semantic. Matrices always store `f64`, but a
//! matrix in [`Precision::Single`] mode rounds every stored value and every
//! accumulation to `f32`, so both precisions share one code path.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl Precision {
    /// Tolerance used when checking that probability mass sums to one.
    pub fn mass_tolerance(self) -> f64 {
        match self {
            Precision::Single => 1e-5,
            Precision::Double => 1e-9,
        }
    }

    #[inline]
    fn round(self, x: f64) -> f64 {
        match self {
            Precision::Single => x as f32 as f64,
            Precision::Double => x,
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    precision: Precision,
}

const BLOCK: usize = 64;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            precision: Precision::Double,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dims(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix data".into()));
        }
        Ok(Self {
            rows,
            cols,
            data,
            precision: Precision::Double,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Re-tags the matrix, rounding stored values when narrowing to single precision.
    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        for x in &mut self.data {
            *x = precision.round(*x);
        }
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = self.precision.round(v);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, x) in s.iter_mut().zip(self.row(i)) {
                *acc += x;
            }
        }
        s
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        t.precision = self.precision;
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let p = self.precision;
        Matrix {
            data: self.data.iter().map(|x| p.round(x * s)).collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        let p = self.precision;
        Ok(Matrix {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| p.round(a + b))
                .collect(),
            ..self.clone()
        })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// True when every entry strictly above the diagonal is zero.
    pub fn is_lower_triangular(&self) -> bool {
        (0..self.rows).all(|i| ((i + 1)..self.cols).all(|j| self.get(i, j) == 0.0))
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dims(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        if self.precision != other.precision {
            return Err(Error::contract("mixed precision operands"));
        }
        Ok(())
    }

    /// Square matrix power by repeated multiplication (t multiplications).
    pub fn power(&self, t: usize) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::dims("power of a non-square matrix"));
        }
        let mut acc = Matrix::identity(self.rows).with_precision(self.precision);
        for _ in 0..t {
            acc = matmul(&acc, self)?;
        }
        Ok(acc)
    }

    /// `v · self` for a row vector `v`.
    pub fn left_mul_row(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::dims("row vector length"));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(self.row(i)) {
                *o += vi * m;
            }
        }
        Ok(out.into_iter().map(|x| self.precision.round(x)).collect())
    }

    /// `self · v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dims("column vector length"));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.precision
                    .round(self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            })
            .collect())
    }
}

/// Blocked matrix product with a fixed summation order.
///
/// For each output entry the `k` index is visited in increasing order, block
/// by block, so results are bit-reproducible for a given precision.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::dims(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if a.precision != b.precision {
        return Err(Error::contract("matmul operands differ in precision"));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);
    out.precision = a.precision;
    match a.precision {
        Precision::Double => {
            for kb in (0..k).step_by(BLOCK) {
                let ke = (kb + BLOCK).min(k);
                for i in 0..m {
                    let orow = &mut out.data[i * n..(i + 1) * n];
                    for kk in kb..ke {
                        let aik = a.data[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        for (o, bv) in orow.iter_mut().zip(&b.data[kk * n..(kk + 1) * n]) {
                            *o += aik * bv;
                        }
                    }
                }
            }
        }
        Precision::Single => {
            let mut acc = vec![0f32; m * n];
            for kb in (0..k).step_by(BLOCK) {
                let ke = (kb + BLOCK).min(k);
                for i in 0..m {
                    let orow = &mut acc[i * n..(i + 1) * n];
                    for kk in kb..ke {
                        let aik = a.data[i * k + kk] as f32;
                        if aik == 0.0 {
                            continue;
                        }
                        for (o, bv) in orow.iter_mut().zip(&b.data[kk * n..(kk + 1) * n]) {
                            *o += aik * (*bv as f32);
                        }
                    }
                }
            }
            out.data = acc.into_iter().map(f64::from).collect();
        }
    }
    Ok(out)
}

/// Non-negative vector with unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    entries: Vec<f64>,
}

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(entries, Precision::Double.mass_tolerance())
    }

    pub fn with_tolerance(entries: Vec<f64>, tol: f64) -> Result<Self> {
        if entries.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::contract("probability entries must be finite and non-negative"));
        }
        let total: f64 = entries.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::contract(format!("probability mass {total} is not 1")));
        }
        Ok(Self { entries })
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut entries = vec![0.0; n];
        entries[i] = 1.0;
        Self { entries }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            entries: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

/// Total variation distance, `½ Σ |pᵢ − qᵢ|`.
pub fn tv_distance(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    tv_distance_slices(p.as_slice(), q.as_slice())
}

pub(crate) fn tv_distance_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims("total variation operands differ in length"));
    }
    let d = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(d.clamp(0.0, 1.0))
}

/// Deterministic random stream addressed by `(seed, stream)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector gives independent,
/// schedule-free sequences for every address.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Stream addressed by a tuple of indices, e.g. `(sample, position, simulation)`.
    pub fn derive(seed: u64, indices: &[u64]) -> Self {
        let stream = indices
            .iter()
            .fold(0x243f_6a88_85a3_08d3u64, |h, &i| splitmix64(h ^ splitmix64(i)));
        Self::new(seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Inverse-CDF categorical draw using a single uniform.
pub fn sample_categorical(weights: &[f64], rng: &mut RngStream) -> Result<usize> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::contract("categorical weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let target = rng.uniform() * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        cum += w;
        if target < cum {
            return Ok(i);
        }
    }
    // rounding left the target at the very top of the range
    Ok(last_positive)
}

/// Row-wise softmax restricted to the visible prefix `j ≤ i`.
pub fn softmax_causal_rows(logits: &Matrix) -> Result<Matrix> {
    if !logits.is_square() {
        return Err(Error::dims("causal softmax needs a square matrix"));
    }
    let n = logits.rows();
    let mut out = Matrix::zeros(n, n).with_precision(logits.precision());
    for i in 0..n {
        let row = &logits.row(i)[..=i];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (j, e) in exps.into_iter().enumerate() {
            out.set(i, j, e / z);
        }
    }
    Ok(out)
}
