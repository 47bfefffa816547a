//! Forward pass with activation caching, and its reverse-mode derivative.

use rand::RngCore;

use super::kernels::{axpy, dot, gemm, gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{MicroformerModel, Scalar};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::record::AttentionRecord;

const RMS_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct LayerCache<T> {
    x_in: Vec<T>,
    inv_rms1: Vec<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads × n × n`, zero above the diagonal.
    pub(crate) probs: Vec<T>,
    attn_mask: Option<Vec<T>>,
    o: Vec<T>,
    x_mid: Vec<T>,
    inv_rms2: Vec<T>,
    h2: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
    mlp_mask: Option<Vec<T>>,
}

pub(crate) struct SampleCache<T> {
    pub(crate) layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    inv_rms_f: Vec<T>,
    hf: Vec<T>,
    pub(crate) logits: Vec<T>,
}

fn rmsnorm<T: Scalar>(x: &[T], gain: &[T], n: usize, d: usize) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); n * d];
    let mut inv = vec![T::zero(); n];
    let eps = T::of(RMS_EPS);
    let dd = T::of(d as f64);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let r = T::one() / (dot(row, row) / dd + eps).sqrt();
        inv[i] = r;
        for ((o, &xv), &g) in y[i * d..(i + 1) * d].iter_mut().zip(row).zip(gain) {
            *o = xv * r * g;
        }
    }
    (y, inv)
}

/// Accumulates into `dx` and `dgain`.
fn rmsnorm_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    inv: &[T],
    gain: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    n: usize,
    d: usize,
) {
    let dd = T::of(d as f64);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let r = inv[i];
        let mut s = T::zero();
        for c in 0..d {
            s += dyr[c] * gain[c] * row[c];
            dgain[c] += dyr[c] * row[c] * r;
        }
        let coef = r * r * r * s / dd;
        for c in 0..d {
            dx[i * d + c] += r * gain[c] * dyr[c] - coef * row[c];
        }
    }
}

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(0.044_715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(0.044_715);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// Inverted-dropout multipliers. One 32-bit draw per unit: dropped when below `p·2³²`.
fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut RngStream) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    let cut = (p * 4_294_967_296.0) as u64;
    (0..len)
        .map(|_| if (rng.next_u32() as u64) < cut { T::zero() } else { keep })
        .collect()
}

/// Like [`dropout_mask`] over `heads × n × n`, drawing only on and below the diagonal.
fn causal_dropout_mask<T: Scalar>(heads: usize, n: usize, p: f64, rng: &mut RngStream) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    let cut = (p * 4_294_967_296.0) as u64;
    let mut mask = vec![T::zero(); heads * n * n];
    for row in 0..heads * n {
        let i = row % n;
        for m in &mut mask[row * n..=row * n + i] {
            *m = if (rng.next_u32() as u64) < cut { T::zero() } else { keep };
        }
    }
    mask
}

/// Attention probabilities with the dropout mask applied, if any.
fn masked<'a, T: Scalar>(probs: &'a [T], mask: Option<&[T]>) -> std::borrow::Cow<'a, [T]> {
    match mask {
        Some(m) => probs.iter().zip(m).map(|(&p, &k)| p * k).collect(),
        None => std::borrow::Cow::Borrowed(probs),
    }
}

impl<T: Scalar> MicroformerModel<T> {
    fn check_tokens(&self, tokens: &[u16]) -> Result<()> {
        if tokens.len() > self.cfg.seq_len || tokens.is_empty() {
            return Err(Error::dims(format!(
                "sequence of length {} for a model with seq_len {}",
                tokens.len(),
                self.cfg.seq_len
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab) {
            return Err(Error::contract(format!("token {t} outside vocabulary {}", self.cfg.vocab)));
        }
        Ok(())
    }

    /// Full forward pass keeping everything the backward pass needs.
    /// Dropout is applied only when `rng` is given and the rate is positive.
    pub(crate) fn forward_cached(
        &self,
        tokens: &[u16],
        mut rng: Option<&mut RngStream>,
    ) -> Result<SampleCache<T>> {
        self.check_tokens(tokens)?;
        let cfg = &self.cfg;
        let p = &self.params;
        let (n, d, m, heads, vocab) = (tokens.len(), cfg.d_model, cfg.mlp_hidden, cfg.heads, cfg.vocab);
        let hd = cfg.head_dim();
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let lay = &self.layout;
        let drop = cfg.dropout > 0.0 && rng.is_some();

        let mut x = vec![T::zero(); n * d];
        for (i, &t) in tokens.iter().enumerate() {
            let tok = &p[lay.tok + t as usize * d..lay.tok + (t as usize + 1) * d];
            let pos = &p[lay.pos + i * d..lay.pos + (i + 1) * d];
            for ((o, &a), &b) in x[i * d..(i + 1) * d].iter_mut().zip(tok).zip(pos) {
                *o = a + b;
            }
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for slots in &lay.layers {
            let (h1, inv_rms1) = rmsnorm(&x, &p[slots.ln1..slots.ln1 + d], n, d);
            let mut q = vec![T::zero(); n * d];
            let mut k = vec![T::zero(); n * d];
            let mut v = vec![T::zero(); n * d];
            gemm_acc(&mut q, &h1, &p[slots.wq..slots.wq + d * d], n, d, d);
            gemm_acc(&mut k, &h1, &p[slots.wk..slots.wk + d * d], n, d, d);
            gemm_acc(&mut v, &h1, &p[slots.wv..slots.wv + d * d], n, d, d);

            let mut probs = vec![T::zero(); heads * n * n];
            let attn_mask = match rng.as_deref_mut() {
                Some(r) if drop => Some(causal_dropout_mask::<T>(heads, n, cfg.dropout, r)),
                _ => None,
            };
            let mut o = vec![T::zero(); n * d];
            for h in 0..heads {
                let ph = &mut probs[h * n * n..(h + 1) * n * n];
                let col = h * hd;
                gemm(n, hd, n, scale, &q[col..], (d, 1), &k[col..], (1, d), T::zero(), ph, (n, 1));
                for i in 0..n {
                    let row = &mut ph[i * n..(i + 1) * n];
                    let max = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for r in row[..=i].iter_mut() {
                        *r = (*r - max).exp();
                        z += *r;
                    }
                    for r in row[..=i].iter_mut() {
                        *r = *r / z;
                    }
                    row[i + 1..].fill(T::zero());
                }
                let used = masked(ph, attn_mask.as_deref().map(|m| &m[h * n * n..(h + 1) * n * n]));
                gemm(n, n, hd, T::one(), &used, (n, 1), &v[col..], (d, 1), T::zero(), &mut o[col..], (d, 1));
            }

            let mut x_mid = x.clone();
            gemm_acc(&mut x_mid, &o, &p[slots.wo..slots.wo + d * d], n, d, d);

            let (h2, inv_rms2) = rmsnorm(&x_mid, &p[slots.ln2..slots.ln2 + d], n, d);
            let mut pre = vec![T::zero(); n * m];
            gemm_acc(&mut pre, &h2, &p[slots.w1..slots.w1 + d * m], n, d, m);
            let mut act: Vec<T> = pre.iter().map(|&u| gelu(u)).collect();
            let mlp_mask = match rng.as_deref_mut() {
                Some(r) if drop => Some(dropout_mask::<T>(n * m, cfg.dropout, r)),
                _ => None,
            };
            let act_dropped: Vec<T> = match &mlp_mask {
                Some(mask) => act.iter().zip(mask).map(|(&a, &k)| a * k).collect(),
                None => std::mem::take(&mut act),
            };
            let mut x_out = x_mid.clone();
            gemm_acc(&mut x_out, &act_dropped, &p[slots.w2..slots.w2 + m * d], n, m, d);
            if mlp_mask.is_none() {
                act = act_dropped;
            }

            layers.push(LayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                inv_rms1,
                h1,
                q,
                k,
                v,
                probs,
                attn_mask,
                o,
                x_mid,
                inv_rms2,
                h2,
                pre,
                act,
                mlp_mask,
            });
        }

        let (hf, inv_rms_f) = rmsnorm(&x, &p[lay.lnf..lay.lnf + d], n, d);
        let mut logits = vec![T::zero(); n * vocab];
        gemm_acc(&mut logits, &hf, &p[lay.unembed..lay.unembed + d * vocab], n, d, vocab);
        Ok(SampleCache {
            layers,
            x_final: x,
            inv_rms_f,
            hf,
            logits,
        })
    }

    /// Logits (`n × vocab`, row-major) and per-layer attention records.
    pub fn forward(
        &self,
        tokens: &[u16],
        mode: Mode,
        rng: Option<&mut RngStream>,
    ) -> Result<(Vec<T>, Vec<AttentionRecord>)> {
        let rng = match mode {
            Mode::Train => rng,
            Mode::Eval => None,
        };
        let cache = self.forward_cached(tokens, rng)?;
        let n = tokens.len();
        let records = cache
            .layers
            .iter()
            .enumerate()
            .map(|(l, lc)| self.record_from(l, n, &lc.probs))
            .collect::<Result<Vec<_>>>()?;
        Ok((cache.logits, records))
    }

    pub(crate) fn record_from(&self, layer: usize, n: usize, probs: &[T]) -> Result<AttentionRecord> {
        let maps = probs.iter().map(|x| x.to_f64().expect("finite")).collect();
        AttentionRecord::new(self.cfg.heads, n, maps, self.head_importance(layer)?)
    }

    /// Mean token cross-entropy of one sample, its gradient (scaled by
    /// `scale`, accumulated into `grads`) and the count of argmax hits.
    pub(crate) fn backward(
        &self,
        cache: &SampleCache<T>,
        tokens: &[u16],
        targets: &[u16],
        scale: T,
        grads: &mut [T],
    ) -> (f64, usize) {
        let cfg = &self.cfg;
        let p = &self.params;
        let lay = &self.layout;
        let (n, d, m, heads, vocab) = (tokens.len(), cfg.d_model, cfg.mlp_hidden, cfg.heads, cfg.vocab);
        let hd = cfg.head_dim();
        let att_scale = T::of(1.0 / (hd as f64).sqrt());

        // softmax cross-entropy
        let mut dlogits = vec![T::zero(); n * vocab];
        let mut loss = 0.0;
        let mut correct = 0;
        let inv_n = scale / T::of(n as f64);
        for i in 0..n {
            let row = &cache.logits[i * vocab..(i + 1) * vocab];
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, T::neg_infinity()), |b, (c, v)| if v > b.1 { (c, v) } else { b });
            let target = targets[i] as usize;
            if arg == target {
                correct += 1;
            }
            let mut z = T::zero();
            let drow = &mut dlogits[i * vocab..(i + 1) * vocab];
            for (dl, &l) in drow.iter_mut().zip(row) {
                *dl = (l - max).exp();
                z += *dl;
            }
            loss += (z.ln() + max - row[target]).to_f64().expect("finite");
            for dl in drow.iter_mut() {
                *dl = *dl / z * inv_n;
            }
            drow[target] = drow[target] - inv_n;
        }
        loss /= n as f64;

        gemm_tn_acc(&mut grads[lay.unembed..lay.unembed + d * vocab], &cache.hf, &dlogits, n, d, vocab);
        let mut dhf = vec![T::zero(); n * d];
        gemm_nt_acc(&mut dhf, &dlogits, &p[lay.unembed..lay.unembed + d * vocab], n, vocab, d);

        let mut dx = vec![T::zero(); n * d];
        {
            let mut dgain = vec![T::zero(); d];
            rmsnorm_backward(&dhf, &cache.x_final, &cache.inv_rms_f, &p[lay.lnf..lay.lnf + d], &mut dx, &mut dgain, n, d);
            axpy(&mut grads[lay.lnf..lay.lnf + d], T::one(), &dgain);
        }

        for (slots, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // MLP: x_out = x_mid + dropout(gelu(h2 W1)) W2
            let act_used: Vec<T> = match &lc.mlp_mask {
                Some(mask) => lc.act.iter().zip(mask).map(|(&a, &k)| a * k).collect(),
                None => lc.act.clone(),
            };
            gemm_tn_acc(&mut grads[slots.w2..slots.w2 + m * d], &act_used, &dx, n, m, d);
            let mut dact = vec![T::zero(); n * m];
            gemm_nt_acc(&mut dact, &dx, &p[slots.w2..slots.w2 + m * d], n, d, m);
            if let Some(mask) = &lc.mlp_mask {
                for (g, &k) in dact.iter_mut().zip(mask) {
                    *g *= k;
                }
            }
            for (g, &u) in dact.iter_mut().zip(&lc.pre) {
                *g *= gelu_grad(u);
            }
            gemm_tn_acc(&mut grads[slots.w1..slots.w1 + d * m], &lc.h2, &dact, n, d, m);
            let mut dh2 = vec![T::zero(); n * d];
            gemm_nt_acc(&mut dh2, &dact, &p[slots.w1..slots.w1 + d * m], n, m, d);
            let mut dx_mid = dx;
            {
                let mut dgain = vec![T::zero(); d];
                rmsnorm_backward(&dh2, &lc.x_mid, &lc.inv_rms2, &p[slots.ln2..slots.ln2 + d], &mut dx_mid, &mut dgain, n, d);
                axpy(&mut grads[slots.ln2..slots.ln2 + d], T::one(), &dgain);
            }

            // attention: x_mid = x_in + O Wo
            gemm_tn_acc(&mut grads[slots.wo..slots.wo + d * d], &lc.o, &dx_mid, n, d, d);
            let mut d_o = vec![T::zero(); n * d];
            gemm_nt_acc(&mut d_o, &dx_mid, &p[slots.wo..slots.wo + d * d], n, d, d);

            let mut dq = vec![T::zero(); n * d];
            let mut dk = vec![T::zero(); n * d];
            let mut dv = vec![T::zero(); n * d];
            let mut dp = vec![T::zero(); n * n];
            let mut ds = vec![T::zero(); n * n];
            for h in 0..heads {
                let col = h * hd;
                let ph = &lc.probs[h * n * n..(h + 1) * n * n];
                let mask = lc.attn_mask.as_deref().map(|m| &m[h * n * n..(h + 1) * n * n]);
                let used = masked(ph, mask);
                gemm(n, hd, n, T::one(), &d_o[col..], (d, 1), &lc.v[col..], (1, d), T::zero(), &mut dp, (n, 1));
                gemm(n, n, hd, T::one(), &used, (1, n), &d_o[col..], (d, 1), T::one(), &mut dv[col..], (d, 1));
                if let Some(mask) = mask {
                    for (g, &k) in dp.iter_mut().zip(mask) {
                        *g *= k;
                    }
                }
                for i in 0..n {
                    let prow = &ph[i * n..=i * n + i];
                    let grow = &dp[i * n..=i * n + i];
                    let inner = dot(prow, grow);
                    let srow = &mut ds[i * n..(i + 1) * n];
                    for ((s, &pv), &gv) in srow.iter_mut().zip(prow).zip(grow) {
                        *s = pv * (gv - inner) * att_scale;
                    }
                    srow[i + 1..].fill(T::zero());
                }
                gemm(n, n, hd, T::one(), &ds, (n, 1), &lc.k[col..], (d, 1), T::one(), &mut dq[col..], (d, 1));
                gemm(n, n, hd, T::one(), &ds, (1, n), &lc.q[col..], (d, 1), T::one(), &mut dk[col..], (d, 1));
            }
            gemm_tn_acc(&mut grads[slots.wq..slots.wq + d * d], &lc.h1, &dq, n, d, d);
            gemm_tn_acc(&mut grads[slots.wk..slots.wk + d * d], &lc.h1, &dk, n, d, d);
            gemm_tn_acc(&mut grads[slots.wv..slots.wv + d * d], &lc.h1, &dv, n, d, d);
            let mut dh1 = vec![T::zero(); n * d];
            gemm_nt_acc(&mut dh1, &dq, &p[slots.wq..slots.wq + d * d], n, d, d);
            gemm_nt_acc(&mut dh1, &dk, &p[slots.wk..slots.wk + d * d], n, d, d);
            gemm_nt_acc(&mut dh1, &dv, &p[slots.wv..slots.wv + d * d], n, d, d);
            let mut dx_in = dx_mid;
            {
                let mut dgain = vec![T::zero(); d];
                rmsnorm_backward(&dh1, &lc.x_in, &lc.inv_rms1, &p[slots.ln1..slots.ln1 + d], &mut dx_in, &mut dgain, n, d);
                axpy(&mut grads[slots.ln1..slots.ln1 + d], T::one(), &dgain);
            }
            dx = dx_in;
        }

        for (i, &t) in tokens.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let tok = lay.tok + t as usize * d;
            axpy(&mut grads[tok..tok + d], T::one(), row);
            let pos = lay.pos + i * d;
            axpy(&mut grads[pos..pos + d], T::one(), row);
        }
        (loss, correct)
    }

    /// Mean cross-entropy and full gradient over a batch of `(input, target)` pairs.
    ///
    /// Per-sample gradients are reduced in batch order. `dropout` supplies one
    /// random stream per sample; `None` runs without dropout.
    pub fn loss_and_grads(
        &self,
        batch: &[(&[u16], &[u16])],
        dropout: Option<&(dyn Fn(usize) -> RngStream + Sync)>,
    ) -> Result<(f64, Vec<T>, usize)> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        for (x, y) in batch {
            if x.len() != y.len() {
                return Err(Error::dims("input and target lengths differ"));
            }
        }
        let scale = T::of(1.0 / batch.len() as f64);
        let total = self.params.len();
        let one = |b: usize| -> Result<(f64, Vec<T>, usize)> {
            let (x, y) = batch[b];
            let mut rng = dropout.map(|f| f(b));
            let cache = self.forward_cached(x, rng.as_mut())?;
            let mut g = vec![T::zero(); total];
            let (loss, correct) = self.backward(&cache, x, y, scale, &mut g);
            Ok((loss, g, correct))
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<_> = {
            use rayon::prelude::*;
            (0..batch.len()).into_par_iter().map(one).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<_> = (0..batch.len()).map(one).collect::<Result<_>>()?;

        let mut grads = vec![T::zero(); total];
        let mut loss = 0.0;
        let mut correct = 0;
        for (l, g, c) in parts {
            loss += l;
            correct += c;
            for (acc, x) in grads.iter_mut().zip(g) {
                *acc += x;
            }
        }
        Ok((loss / batch.len() as f64, grads, correct))
    }
}

/// Mean token cross-entropy of row-major logits against targets.
pub fn cross_entropy<T: Scalar>(logits: &[T], targets: &[u16], vocab: usize) -> f64 {
    let n = targets.len();
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row: Vec<f64> = logits[i * vocab..(i + 1) * vocab]
            .iter()
            .map(|x| x.to_f64().expect("finite"))
            .collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        total += z.ln() + max - row[t as usize];
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, ModelConfig};
    use super::*;

    fn tiny(heads: usize, dropout: f64) -> ModelConfig {
        ModelConfig {
            layers: 2,
            d_model: 8,
            mlp_hidden: 16,
            heads,
            vocab: 11,
            seq_len: 6,
            dropout,
            seed: 5,
        }
    }

    #[test]
    fn attention_rows_are_causal_distributions() {
        let model = init_model::<f32>(&ModelConfig {
            heads: 4,
            seq_len: 12,
            ..Default::default()
        })
        .unwrap();
        let tokens: Vec<u16> = (0..12).map(|i| (i * 37 % 256) as u16).collect();
        let (_, recs) = model.forward(&tokens, Mode::Eval, None).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            assert!(r.is_causal());
            let w: f64 = r.head_weights().iter().sum();
            assert!((w - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_dropout_free() {
        let model = init_model::<f64>(&tiny(2, 0.5)).unwrap();
        let tokens = [1u16, 4, 2, 9, 0, 3];
        let mut rng = RngStream::new(1, 1);
        let (a, _) = model.forward(&tokens, Mode::Eval, Some(&mut rng)).unwrap();
        let (b, _) = model.forward(&tokens, Mode::Eval, None).unwrap();
        assert_eq!(a, b);
        let (c, _) = model.forward(&tokens, Mode::Train, Some(&mut rng)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_tokens() {
        let model = init_model::<f64>(&tiny(2, 0.0)).unwrap();
        assert!(model.forward(&[1, 11], Mode::Eval, None).is_err());
        assert!(model.forward(&[1; 7], Mode::Eval, None).is_err());
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let model = init_model::<f32>(&ModelConfig {
            heads: 8,
            ..Default::default()
        })
        .unwrap();
        let ds = crate::taskdata::gen_copy(4, 100, 256, 2).unwrap();
        let mean: f64 = (0..ds.len())
            .map(|b| {
                let (logits, _) = model.forward(ds.input(b), Mode::Eval, None).unwrap();
                cross_entropy(&logits, ds.target(b), 256)
            })
            .sum::<f64>()
            / ds.len() as f64;
        assert!((mean - 256f64.ln()).abs() < 0.1, "{mean}");
    }

    #[test]
    fn future_tokens_do_not_leak() {
        let model = init_model::<f64>(&tiny(2, 0.0)).unwrap();
        let base = [3u16, 1, 4, 1, 5, 9];
        let (l0, _) = model.forward(&base, Mode::Eval, None).unwrap();
        for t in 0..5 {
            let mut pert = base;
            pert[t + 1] = (pert[t + 1] + 5) % 11;
            let (l1, _) = model.forward(&pert, Mode::Eval, None).unwrap();
            assert_eq!(l0[..(t + 1) * 11], l1[..(t + 1) * 11]);
            assert_ne!(l0[(t + 1) * 11..], l1[(t + 1) * 11..]);
        }
    }

    #[test]
    fn rmsnorm_unit_gain_row_norm() {
        let mut rng = RngStream::new(3, 3);
        let d = 16;
        let x: Vec<f64> = (0..4 * d).map(|_| rng.uniform() * 4.0 - 2.0).collect();
        let (y, _) = rmsnorm(&x, &vec![1.0; d], 4, d);
        for i in 0..4 {
            let norm = dot(&y[i * d..(i + 1) * d], &y[i * d..(i + 1) * d]).sqrt();
            let ms = dot(&x[i * d..(i + 1) * d], &x[i * d..(i + 1) * d]) / d as f64;
            let expect = (d as f64).sqrt() * (ms / (ms + RMS_EPS)).sqrt();
            assert!((norm - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_repeatable_and_unused_rows_get_no_gradient() {
        let model = init_model::<f64>(&tiny(2, 0.0)).unwrap();
        let x = [1u16, 2, 3, 2, 1, 0];
        let y = [0u16, 1, 2, 3, 4, 5];
        let batch = [(&x[..], &y[..])];
        let (l1, g1, _) = model.loss_and_grads(&batch, None).unwrap();
        let (l2, g2, _) = model.loss_and_grads(&batch, None).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        let tok = model.layout().tok;
        for t in 6..11 {
            assert!(g1[tok + t * 8..tok + (t + 1) * 8].iter().all(|&g| g == 0.0));
        }
        assert!(g1[tok + 8..tok + 16].iter().any(|&g| g != 0.0));
    }
}
