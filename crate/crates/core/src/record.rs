//! Per-sample attention maps for one layer, and the on-disk dump format.
//!
//! A dump is a pair of files sharing a stem: `<stem>.json` holds the
//! manifest `{task, layer, heads, n, count, head_weights}` and `<stem>.bin`
//! holds `count × heads × n × n` little-endian `f32` values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attngraph::{check_convex, HeadSystem, Orientation, TransitionMatrix};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::Matrix;

const ROW_TOLERANCE: f64 = 1e-5;

/// Post-softmax attention of one layer for one input sample.
///
/// `maps[h][i][j]` is how much query position `i` attends to key `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    heads: usize,
    n: usize,
    maps: Vec<f64>,
    head_weights: Vec<f64>,
}

impl AttentionRecord {
    pub fn new(heads: usize, n: usize, maps: Vec<f64>, head_weights: Vec<f64>) -> Result<Self> {
        if heads == 0 || n == 0 {
            return Err(Error::contract("attention record needs at least one head and position"));
        }
        if maps.len() != heads * n * n || head_weights.len() != heads {
            return Err(Error::dims("attention record shape"));
        }
        if maps.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::contract("attention entries must be finite and non-negative"));
        }
        check_convex(&head_weights)?;
        let rec = Self {
            heads,
            n,
            maps,
            head_weights,
        };
        for h in 0..heads {
            for i in 0..n {
                let s: f64 = rec.row(h, i).iter().sum();
                if (s - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::contract(format!(
                        "head {h} row {i} sums to {s}"
                    )));
                }
            }
        }
        Ok(rec)
    }

    /// Builds a one-sample record from a handcrafted row-stochastic head system.
    pub fn from_head_system(hs: &HeadSystem) -> Result<Self> {
        if hs.orientation() != Orientation::Diffusion {
            return Err(Error::Orientation {
                expected: "diffusion",
                found: "walk",
            });
        }
        let maps = hs
            .heads()
            .iter()
            .flat_map(|h| h.matrix().as_slice().to_vec())
            .collect();
        Self::new(hs.heads().len(), hs.n(), maps, hs.weights().to_vec())
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.head_weights
    }

    pub fn maps(&self) -> &[f64] {
        &self.maps
    }

    fn row(&self, h: usize, i: usize) -> &[f64] {
        let base = (h * self.n + i) * self.n;
        &self.maps[base..base + self.n]
    }

    /// True when every head attends only to itself and earlier positions.
    pub fn is_causal(&self) -> bool {
        (0..self.heads).all(|h| (0..self.n).all(|i| self.row(h, i)[i + 1..].iter().all(|&x| x == 0.0)))
    }

    pub fn head_matrix(&self, h: usize) -> Matrix {
        let base = h * self.n * self.n;
        Matrix::from_vec(self.n, self.n, self.maps[base..base + self.n * self.n].to_vec())
            .expect("record shape is consistent")
    }

    /// `Σ_h w_h A^(h)`, row-stochastic.
    pub fn combined(&self) -> Matrix {
        let nn = self.n * self.n;
        let mut data = vec![0.0; nn];
        for (h, &w) in self.head_weights.iter().enumerate() {
            for (acc, a) in data.iter_mut().zip(&self.maps[h * nn..(h + 1) * nn]) {
                *acc += w * a;
            }
        }
        Matrix::from_vec(self.n, self.n, data).expect("record shape is consistent")
    }

    pub fn head_system(&self) -> HeadSystem {
        let heads = (0..self.heads)
            // rows of f32-derived maps may miss 1 by more than the f64 tolerance
            .map(|h| renormalized_rows(self.head_matrix(h)))
            .collect();
        HeadSystem::new(heads, self.head_weights.clone()).expect("record weights are convex")
    }
}

fn renormalized_rows(m: Matrix) -> TransitionMatrix {
    let n = m.rows();
    let sums = m.row_sums();
    let data = (0..n * n).map(|k| m.as_slice()[k] / sums[k / n]).collect();
    TransitionMatrix::new(
        Matrix::from_vec(n, n, data).expect("shape"),
        Orientation::Diffusion,
    )
    .expect("renormalized rows sum to one")
}

/// Checks that a batch of records is non-empty and shares `n` and head count.
pub(crate) fn check_uniform(records: &[AttentionRecord]) -> Result<(usize, usize)> {
    let first = records
        .first()
        .ok_or_else(|| Error::contract("empty attention dataset"))?;
    if records
        .iter()
        .any(|r| r.n != first.n || r.heads != first.heads)
    {
        return Err(Error::contract("records differ in n or head count"));
    }
    Ok((first.n, first.heads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub task: String,
    pub layer: usize,
    pub heads: usize,
    pub n: usize,
    pub count: usize,
    pub head_weights: Vec<Vec<f64>>,
}

fn dump_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` and `<stem>.bin`. Attention values are narrowed to `f32`.
pub fn write_dump(stem: &Path, task: &str, layer: usize, records: &[AttentionRecord]) -> Result<()> {
    let (n, heads) = check_uniform(records)?;
    let manifest = DumpManifest {
        task: task.to_string(),
        layer,
        heads,
        n,
        count: records.len(),
        head_weights: records.iter().map(|r| r.head_weights.clone()).collect(),
    };
    let mut blob = Vec::with_capacity(records.len() * heads * n * n * 4);
    for r in records {
        for &x in &r.maps {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let (json, bin) = dump_paths(stem);
    write_atomic(&bin, &blob)?;
    write_atomic(&json, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

pub fn read_dump(stem: &Path) -> Result<(DumpManifest, Vec<AttentionRecord>)> {
    let (json, bin) = dump_paths(stem);
    let manifest: DumpManifest = serde_json::from_slice(&std::fs::read(&json)?)?;
    let blob = std::fs::read(&bin)?;
    let per = manifest.heads * manifest.n * manifest.n;
    if blob.len() != manifest.count * per * 4 || manifest.head_weights.len() != manifest.count {
        return Err(Error::format(&bin, "blob size disagrees with manifest"));
    }
    let values: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let records = values
        .chunks_exact(per)
        .zip(&manifest.head_weights)
        .map(|(maps, w)| AttentionRecord::new(manifest.heads, manifest.n, maps.to_vec(), w.clone()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(&bin, e.to_string()))?;
    Ok((manifest, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attngraph::example_two;

    fn uniform_causal(heads: usize, n: usize) -> AttentionRecord {
        let mut maps = vec![0.0; heads * n * n];
        for h in 0..heads {
            for i in 0..n {
                for j in 0..=i {
                    maps[(h * n + i) * n + j] = 1.0 / (i + 1) as f64;
                }
            }
        }
        AttentionRecord::new(heads, n, maps, vec![1.0 / heads as f64; heads]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(AttentionRecord::new(1, 2, vec![1.0, 0.0, 0.3, 0.3], vec![1.0]).is_err());
        assert!(AttentionRecord::new(1, 2, vec![1.0, 0.0, 0.5, 0.5], vec![0.9]).is_err());
        assert!(AttentionRecord::new(1, 2, vec![1.0, 0.0, 0.5], vec![1.0]).is_err());
        let r = uniform_causal(2, 4);
        assert!(r.is_causal());
        let ex = AttentionRecord::from_head_system(&example_two()).unwrap();
        assert!(!ex.is_causal());
        assert_eq!(ex.combined().row(0), &[0.75, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn dump_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("layer1");
        let recs: Vec<_> = (0..3)
            .map(|k| {
                let base = uniform_causal(2, 5);
                let maps = base.maps().iter().map(|&x| x as f32 as f64).collect();
                let w = 0.25 + 0.1 * k as f64;
                AttentionRecord::new(2, 5, maps, vec![w, 1.0 - w]).unwrap()
            })
            .collect();
        write_dump(&stem, "copy", 1, &recs).unwrap();
        let (m, back) = read_dump(&stem).unwrap();
        assert_eq!(m.count, 3);
        assert_eq!(m.layer, 1);
        assert_eq!(back, recs);
    }
}
