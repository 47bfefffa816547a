//! A small pre-norm decoder-only transformer with hand-written backprop.
//!
//! Parameters live in one flat buffer described by a [`Layout`], which keeps
//! the optimizer, checkpointing and gradient checks shape-agnostic.
//! Layer indices in this module are 0-based.

mod checkpoint;
mod kernels;
mod pass;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::numerics::RngStream;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use pass::{cross_entropy, Mode};
pub use train::{
    evaluate, extract_all_layers, extract_attention, train, train_with_hook, EpochStats, Schedule,
    TrainLog, TrainRun,
};

/// Floating-point type the model runs in: `f32` for training, `f64` for checks.
pub trait Scalar:
    Float + Sum + AddAssign + MulAssign + Send + Sync + Default + Debug + 'static
{
    fn of(x: f64) -> Self;

    /// `c ← α·a·b + β·c` on raw strided views.
    ///
    /// # Safety
    /// Every index reachable through the shapes and strides must be in bounds,
    /// and `c` must not overlap `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! scalar_impl {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

scalar_impl!(f32, matrixmultiply::sgemm);
scalar_impl!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub mlp_hidden: usize,
    pub heads: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            d_model: 64,
            mlp_hidden: 128,
            heads: 1,
            vocab: 256,
            seq_len: 100,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.mlp_hidden == 0 {
            return Err(Error::contract("model dimensions must be positive"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::contract(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.vocab == 0 || self.seq_len == 0 {
            return Err(Error::contract("vocab and seq_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Closed-form parameter count; independent of the head count.
    pub fn parameter_count(&self) -> usize {
        let (d, m, v, n) = (self.d_model, self.mlp_hidden, self.vocab, self.seq_len);
        v * d + n * d + self.layers * (2 * d + 4 * d * d + 2 * d * m) + d + d * v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlots {
    pub ln1: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2: usize,
    pub w1: usize,
    pub w2: usize,
}

/// Offsets of every tensor in the flat parameter buffer, in declaration order.
#[derive(Debug, Clone)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    pub(crate) tok: usize,
    pub(crate) pos: usize,
    pub(crate) layers: Vec<LayerSlots>,
    pub(crate) lnf: usize,
    pub(crate) unembed: usize,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, m) = (cfg.d_model, cfg.mlp_hidden);
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = specs.last().map_or(0, |s: &TensorSpec| s.offset + s.len());
            specs.push(TensorSpec {
                name,
                shape,
                offset,
            });
            offset
        };
        let tok = push("tok_emb".into(), vec![cfg.vocab, d]);
        let pos = push("pos_emb".into(), vec![cfg.seq_len, d]);
        let layers = (0..cfg.layers)
            .map(|l| LayerSlots {
                ln1: push(format!("layer{l}.ln1"), vec![d]),
                wq: push(format!("layer{l}.wq"), vec![d, d]),
                wk: push(format!("layer{l}.wk"), vec![d, d]),
                wv: push(format!("layer{l}.wv"), vec![d, d]),
                wo: push(format!("layer{l}.proj"), vec![d, d]),
                ln2: push(format!("layer{l}.ln2"), vec![d]),
                w1: push(format!("layer{l}.mlp_in"), vec![d, m]),
                w2: push(format!("layer{l}.mlp_out"), vec![m, d]),
            })
            .collect();
        let lnf = push("ln_f".into(), vec![d]);
        let unembed = push("unembed".into(), vec![d, cfg.vocab]);
        let total = specs.last().map_or(0, |s| s.offset + s.len());
        Self {
            specs,
            tok,
            pos,
            layers,
            lnf,
            unembed,
            total,
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Tensor whose range contains flat index `k`.
    pub fn spec_of(&self, k: usize) -> &TensorSpec {
        let i = self.specs.partition_point(|s| s.offset <= k) - 1;
        &self.specs[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct MicroformerModel<T: Scalar> {
    cfg: ModelConfig,
    layout: Layout,
    params: Vec<T>,
    adam: AdamState<T>,
}

impl<T: Scalar> PartialEq for MicroformerModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.params == other.params && self.adam == other.adam
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

const INIT_STREAM: u64 = 0x1417;

/// Uniform `±1/√fan_in` for projections, `N(0, 0.02)` for embedding tables
/// (including the unembedding), unit RMSNorm gains.
pub fn init_model<T: Scalar>(cfg: &ModelConfig) -> Result<MicroformerModel<T>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut params = vec![T::zero(); layout.total()];
    let mut rng = RngStream::new(cfg.seed, INIT_STREAM);
    let normal = Normal::new(0.0, 0.02).expect("valid normal");
    for spec in layout.specs() {
        let fill = &mut params[spec.range()];
        let kind = spec.name.rsplit('.').next().unwrap_or(&spec.name);
        match kind {
            "tok_emb" | "pos_emb" | "unembed" => {
                for p in fill {
                    *p = T::of(normal.sample(&mut rng));
                }
            }
            "ln1" | "ln2" | "ln_f" => fill.fill(T::one()),
            _ => {
                let bound = 1.0 / (spec.shape[0] as f64).sqrt();
                for p in fill {
                    *p = T::of(rng.random_range(-bound..bound));
                }
            }
        }
    }
    Ok(MicroformerModel::from_parts(cfg.clone(), params, 0))
}

impl<T: Scalar> MicroformerModel<T> {
    pub(crate) fn from_parts(cfg: ModelConfig, params: Vec<T>, step: u64) -> Self {
        let layout = Layout::new(&cfg);
        let n = params.len();
        Self {
            cfg,
            layout,
            params,
            adam: AdamState {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                step,
            },
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn adam_state(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Converts every parameter to another precision; optimizer state restarts.
    pub fn cast<U: Scalar>(&self) -> MicroformerModel<U> {
        let params = self
            .params
            .iter()
            .map(|p| U::of(p.to_f64().expect("finite")))
            .collect();
        MicroformerModel::from_parts(self.cfg.clone(), params, self.adam.step)
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &[T], opt: &AdamConfig) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::dims("gradient length differs from parameter count"));
        }
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} (flat index {k})",
                self.layout.spec_of(k).name
            )));
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let (b1, b2) = (T::of(opt.beta1), T::of(opt.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::of(opt.lr), T::of(opt.eps));
        let one = T::one();
        for (((p, &g), m), v) in self
            .params
            .iter_mut()
            .zip(grads)
            .zip(self.adam.m.iter_mut())
            .zip(self.adam.v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }

    /// Frobenius norm of each head's block of input rows in the output
    /// projection, normalized to sum to one.
    pub fn head_importance(&self, layer: usize) -> Result<Vec<f64>> {
        let slots = self
            .layout
            .layers
            .get(layer)
            .ok_or_else(|| Error::contract(format!("layer {layer} out of range")))?;
        let (d, h) = (self.cfg.d_model, self.cfg.heads);
        let hd = d / h;
        let wo = &self.params[slots.wo..slots.wo + d * d];
        let norms: Vec<f64> = (0..h)
            .map(|head| {
                wo[head * hd * d..(head + 1) * hd * d]
                    .iter()
                    .map(|x| x.to_f64().expect("finite").powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let total: f64 = norms.iter().sum();
        if total > 0.0 {
            Ok(norms.iter().map(|x| x / total).collect())
        } else {
            Ok(vec![1.0 / h as f64; h])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_head_independent() {
        let counts: Vec<usize> = [1, 4, 8, 16]
            .iter()
            .map(|&heads| {
                let cfg = ModelConfig {
                    heads,
                    ..Default::default()
                };
                let m = init_model::<f32>(&cfg).unwrap();
                assert_eq!(m.parameter_count(), cfg.parameter_count());
                m.parameter_count()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(counts[0], 170_816);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig {
            heads: 4,
            seed: 9,
            ..Default::default()
        };
        let a = init_model::<f32>(&cfg).unwrap();
        let b = init_model::<f32>(&cfg).unwrap();
        assert_eq!(a.params(), b.params());
        let c = init_model::<f32>(&ModelConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(init_model::<f32>(&bad).is_err());
        let bad = ModelConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let cfg = ModelConfig {
            layers: 1,
            d_model: 8,
            mlp_hidden: 8,
            heads: 2,
            vocab: 5,
            seq_len: 4,
            ..Default::default()
        };
        let mut m = init_model::<f64>(&cfg).unwrap();
        let before = m.params().to_vec();
        m.adam_step(&vec![0.0; before.len()], &AdamConfig::default()).unwrap();
        assert_eq!(m.params(), &before[..]);
        assert_eq!(m.step(), 1);
        let mut g = vec![0.0; before.len()];
        g[3] = f64::NAN;
        assert!(matches!(
            m.adam_step(&g, &AdamConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn adam_first_step_on_scalar_quadratic() {
        // f(x) = x², x₀ = 0.5, g = 1.0; first bias-corrected step moves by lr·g/(|g|+eps')
        let cfg = ModelConfig {
            layers: 1,
            d_model: 2,
            mlp_hidden: 2,
            heads: 1,
            vocab: 2,
            seq_len: 1,
            ..Default::default()
        };
        let mut m = init_model::<f64>(&cfg).unwrap();
        m.params_mut().fill(0.0);
        m.params_mut()[0] = 0.5;
        let mut g = vec![0.0; m.parameter_count()];
        g[0] = 2.0 * 0.5;
        let opt = AdamConfig::default();
        m.adam_step(&g, &opt).unwrap();
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((m.params()[0] - expected).abs() < 1e-15);
        // second step with the same gradient moves by the same amount
        m.adam_step(&g, &opt).unwrap();
        assert!((m.params()[0] - (0.5 - 2.0 * 1e-3 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn head_importance_examples() {
        let cfg = ModelConfig {
            layers: 1,
            d_model: 4,
            mlp_hidden: 4,
            heads: 2,
            vocab: 3,
            seq_len: 2,
            ..Default::default()
        };
        let mut m = init_model::<f64>(&cfg).unwrap();
        let wo = m.layout().layers[0].wo;
        // head 0 owns input rows 0..2, head 1 rows 2..4; scale 3:1
        for (k, p) in m.params_mut()[wo..wo + 16].iter_mut().enumerate() {
            *p = if k < 8 { 3.0 } else { 1.0 };
        }
        let w = m.head_importance(0).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert!(m.head_importance(1).is_err());

        let single = init_model::<f64>(&ModelConfig { heads: 1, ..cfg }).unwrap();
        assert_eq!(single.head_importance(0).unwrap(), vec![1.0]);
    }
}
