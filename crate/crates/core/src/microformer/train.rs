//! Mini-batch training loop, evaluation and attention extraction.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::pass::cross_entropy;
use super::{init_model, AdamConfig, MicroformerModel, Mode, ModelConfig, Scalar};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::record::AttentionRecord;
use crate::taskdata::Dataset;

const SHUFFLE_TAG: u64 = 0x5348;
const DROPOUT_TAG: u64 = 0x4452;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Call the checkpoint hook every this many epochs (0 = only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 50,
            lr: 1e-3,
            checkpoint_every: 0,
        }
    }
}

impl Schedule {
    /// 50 epochs, batch 50.
    pub fn reduced() -> Self {
        Self {
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("schedule needs at least one epoch and a positive batch size"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch's batches (dropout on).
    pub loss: f64,
    /// Fraction of positions whose argmax equals the target.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// Not persisted, so log files stay byte-stable across reruns.
    #[serde(skip)]
    pub wall_time_secs: f64,
    pub config_hash: String,
    pub seed: u64,
    pub schedule: Schedule,
    /// Epoch at which a non-finite loss or gradient stopped training.
    pub diverged_at: Option<usize>,
}

/// Wall time is ignored.
impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.config_hash == other.config_hash
            && self.seed == other.seed
            && self.schedule == other.schedule
            && self.diverged_at == other.diverged_at
    }
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun<T: Scalar> {
    /// The last model whose epoch finished with finite loss.
    pub model: MicroformerModel<T>,
    pub log: TrainLog,
}

fn check_dataset(cfg: &ModelConfig, ds: &Dataset) -> Result<()> {
    if ds.seq_len() != cfg.seq_len || ds.vocab() != cfg.vocab {
        return Err(Error::dims(format!(
            "dataset (n={}, vocab={}) does not match model (n={}, vocab={})",
            ds.seq_len(),
            ds.vocab(),
            cfg.seq_len,
            cfg.vocab
        )));
    }
    Ok(())
}

pub fn train<T: Scalar>(cfg: &ModelConfig, ds: &Dataset, schedule: &Schedule) -> Result<TrainRun<T>> {
    train_with_hook(cfg, ds, schedule, |_, _| Ok(()))
}

/// Trains from a fresh initialization. `hook` runs after each epoch selected
/// by `schedule.checkpoint_every` and after the last one.
pub fn train_with_hook<T, F>(
    cfg: &ModelConfig,
    ds: &Dataset,
    schedule: &Schedule,
    mut hook: F,
) -> Result<TrainRun<T>>
where
    T: Scalar,
    F: FnMut(&MicroformerModel<T>, &EpochStats) -> Result<()>,
{
    schedule.validate()?;
    check_dataset(cfg, ds)?;
    let start = Instant::now();
    let mut model = init_model::<T>(cfg)?;
    let opt = AdamConfig {
        lr: schedule.lr,
        ..AdamConfig::default()
    };
    let mut log = TrainLog {
        epochs: Vec::with_capacity(schedule.epochs),
        wall_time_secs: 0.0,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        schedule: schedule.clone(),
        diverged_at: None,
    };
    let positions_per_sample = cfg.seq_len as f64;
    let mut order: Vec<usize> = (0..ds.len()).collect();

    'epochs: for epoch in 0..schedule.epochs {
        let snapshot = model.clone();
        let mut shuffle = RngStream::derive(cfg.seed, &[SHUFFLE_TAG, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut shuffle);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<(&[u16], &[u16])> = chunk.iter().map(|&b| (ds.input(b), ds.target(b))).collect();
            let step = model.step();
            let seed = cfg.seed;
            let streams = move |i: usize| RngStream::derive(seed, &[DROPOUT_TAG, step, i as u64]);
            let dropout: Option<&(dyn Fn(usize) -> RngStream + Sync)> = if cfg.dropout > 0.0 { Some(&streams) } else { None };
            let (loss, grads, hits) = model.loss_and_grads(&batch, dropout)?;
            let stepped = if loss.is_finite() {
                model.adam_step(&grads, &opt)
            } else {
                Err(Error::NonFinite("loss".into()))
            };
            match stepped {
                Ok(()) if model.is_finite() => {}
                Ok(()) | Err(Error::NonFinite(_)) => {
                    model = snapshot;
                    log.diverged_at = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            loss_sum += loss;
            batches += 1;
            correct += hits;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / (ds.len() as f64 * positions_per_sample),
        };
        let last = epoch + 1 == schedule.epochs;
        let due = schedule.checkpoint_every > 0 && (epoch + 1) % schedule.checkpoint_every == 0;
        if last || due {
            hook(&model, &stats)?;
        }
        log.epochs.push(stats);
    }
    log.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(TrainRun { model, log })
}

/// Eval-mode mean cross-entropy and token accuracy.
pub fn evaluate<T: Scalar>(model: &MicroformerModel<T>, ds: &Dataset) -> Result<(f64, f64)> {
    check_dataset(model.config(), ds)?;
    let vocab = model.config().vocab;
    let one = |b: usize| -> Result<(f64, usize)> {
        let (logits, _) = model.forward(ds.input(b), Mode::Eval, None)?;
        let target = ds.target(b);
        let hits = target
            .iter()
            .enumerate()
            .filter(|&(i, &t)| {
                let row = &logits[i * vocab..(i + 1) * vocab];
                let arg = row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (c, v)| if *v > row[best] { c } else { best });
                arg == t as usize
            })
            .count();
        Ok((cross_entropy(&logits, target, vocab), hits))
    };
    let parts = map_samples(ds.len(), one)?;
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / ds.len() as f64;
    let hits: usize = parts.iter().map(|p| p.1).sum();
    Ok((loss, hits as f64 / (ds.len() * ds.seq_len()) as f64))
}

/// Eval-mode attention records for one 0-based layer over the first `limit` samples.
pub fn extract_attention<T: Scalar>(
    model: &MicroformerModel<T>,
    ds: &Dataset,
    layer: usize,
    limit: usize,
) -> Result<Vec<AttentionRecord>> {
    if layer >= model.config().layers {
        return Err(Error::contract(format!(
            "layer {layer} out of range for a {}-layer model",
            model.config().layers
        )));
    }
    Ok(extract_all_layers(model, ds, limit)?.swap_remove(layer))
}

/// Records for every layer from a single forward pass per sample, indexed `[layer][sample]`.
pub fn extract_all_layers<T: Scalar>(
    model: &MicroformerModel<T>,
    ds: &Dataset,
    limit: usize,
) -> Result<Vec<Vec<AttentionRecord>>> {
    check_dataset(model.config(), ds)?;
    let count = limit.min(ds.len());
    let per_sample = map_samples(count, |b| Ok(model.forward(ds.input(b), Mode::Eval, None)?.1))?;
    let mut by_layer: Vec<Vec<AttentionRecord>> = (0..model.config().layers).map(|_| Vec::with_capacity(count)).collect();
    for records in per_sample {
        for (l, r) in records.into_iter().enumerate() {
            by_layer[l].push(r);
        }
    }
    Ok(by_layer)
}

fn map_samples<R: Send>(count: usize, f: impl Fn(usize) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}
