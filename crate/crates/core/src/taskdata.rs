//! Synthetic copy and cycle datasets.
//!
//! File layout: one line of JSON header `{task, count, n, vocab, seed}`
//! terminated by `\n`, then `count × n` little-endian `u16` input tokens
//! followed by the same number of target tokens, both sample-major.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::RngStream;

pub const DEFAULT_COUNT: usize = 5000;
pub const DEFAULT_SEQ_LEN: usize = 100;
pub const DEFAULT_VOCAB: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// `x ↦ x`.
    Copy,
    /// `(x₁, …, x_n) ↦ (x_n, x₁, …, x_{n−1})`.
    Cycle,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Copy => "copy",
            Task::Cycle => "cycle",
        }
    }

    pub fn target(self, input: &[u16]) -> Vec<u16> {
        match self {
            Task::Copy => input.to_vec(),
            Task::Cycle => {
                let mut t = input.to_vec();
                t.rotate_right(1);
                t
            }
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "cycle" => Ok(Task::Cycle),
            other => Err(Error::contract(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub task: Task,
    pub count: usize,
    pub n: usize,
    pub vocab: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    header: DatasetHeader,
    inputs: Vec<u16>,
    targets: Vec<u16>,
}

fn generate(task: Task, count: usize, n: usize, vocab: usize, seed: u64) -> Result<Dataset> {
    if count == 0 || n == 0 {
        return Err(Error::contract("dataset needs at least one sample and position"));
    }
    if vocab == 0 || vocab > u16::MAX as usize + 1 {
        return Err(Error::contract("vocabulary must fit in 16-bit tokens"));
    }
    let mut inputs = Vec::with_capacity(count * n);
    let mut targets = Vec::with_capacity(count * n);
    for b in 0..count {
        let mut rng = RngStream::derive(seed, &[b as u64]);
        let x: Vec<u16> = (0..n).map(|_| rng.random_range(0..vocab) as u16).collect();
        targets.extend(task.target(&x));
        inputs.extend(x);
    }
    Ok(Dataset {
        header: DatasetHeader {
            task,
            count,
            n,
            vocab,
            seed,
        },
        inputs,
        targets,
    })
}

pub fn gen_copy(count: usize, n: usize, vocab: usize, seed: u64) -> Result<Dataset> {
    generate(Task::Copy, count, n, vocab, seed)
}

pub fn gen_cycle(count: usize, n: usize, vocab: usize, seed: u64) -> Result<Dataset> {
    generate(Task::Cycle, count, n, vocab, seed)
}

pub fn generate_task(task: Task, count: usize, n: usize, vocab: usize, seed: u64) -> Result<Dataset> {
    generate(task, count, n, vocab, seed)
}

impl Dataset {
    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn task(&self) -> Task {
        self.header.task
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn seq_len(&self) -> usize {
        self.header.n
    }

    pub fn vocab(&self) -> usize {
        self.header.vocab
    }

    pub fn input(&self, b: usize) -> &[u16] {
        let n = self.header.n;
        &self.inputs[b * n..(b + 1) * n]
    }

    pub fn target(&self, b: usize) -> &[u16] {
        let n = self.header.n;
        &self.targets[b * n..(b + 1) * n]
    }

    /// First `count` samples (all of them when `count` exceeds the size).
    pub fn truncated(&self, count: usize) -> Dataset {
        let count = count.min(self.len());
        let n = self.header.n;
        Dataset {
            header: DatasetHeader {
                count,
                ..self.header.clone()
            },
            inputs: self.inputs[..count * n].to_vec(),
            targets: self.targets[..count * n].to_vec(),
        }
    }

    /// Every sample's target follows the task rule and every token is in range.
    pub fn verify(&self) -> Result<()> {
        let v = self.header.vocab;
        if self.inputs.iter().chain(&self.targets).any(|&t| t as usize >= v) {
            return Err(Error::contract("token outside vocabulary"));
        }
        for b in 0..self.len() {
            if self.task().target(self.input(b)) != self.target(b) {
                return Err(Error::contract(format!("sample {b} breaks the {} rule", self.task())));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        for &t in self.inputs.iter().chain(&self.targets) {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::contract("dataset header is not newline-terminated"))?;
        let header: DatasetHeader = serde_json::from_slice(&bytes[..nl])?;
        let body = &bytes[nl + 1..];
        let per = header.count * header.n;
        if body.len() != per * 4 {
            return Err(Error::contract(format!(
                "dataset body has {} bytes, expected {}",
                body.len(),
                per * 4
            )));
        }
        let tokens: Vec<u16> = body
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        let ds = Dataset {
            header,
            inputs: tokens[..per].to_vec(),
            targets: tokens[per..].to_vec(),
        };
        ds.verify()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_rule_instance() {
        assert_eq!(Task::Cycle.target(&[7, 3, 9]), vec![9, 7, 3]);
        let mut x = vec![1, 2, 3, 4, 5];
        let orig = x.clone();
        for _ in 0..5 {
            x = Task::Cycle.target(&x);
        }
        assert_eq!(x, orig);
    }

    #[test]
    fn rules_hold_for_every_sample() {
        let copy = gen_copy(200, 20, 256, 1).unwrap();
        copy.verify().unwrap();
        assert!((0..copy.len()).all(|b| copy.input(b) == copy.target(b)));
        let cycle = gen_cycle(200, 20, 256, 1).unwrap();
        cycle.verify().unwrap();
        for b in 0..cycle.len() {
            let mut a = cycle.input(b).to_vec();
            let mut t = cycle.target(b).to_vec();
            a.sort_unstable();
            t.sort_unstable();
            assert_eq!(a, t);
        }
    }

    #[test]
    fn seeded_and_round_trips() {
        let a = gen_cycle(30, 10, 256, 7).unwrap();
        assert_eq!(a.to_bytes(), gen_cycle(30, 10, 256, 7).unwrap().to_bytes());
        assert_ne!(a.to_bytes(), gen_cycle(30, 10, 256, 8).unwrap().to_bytes());
        assert_eq!(Dataset::from_bytes(&a.to_bytes()).unwrap(), a);
        let mut bad = a.to_bytes();
        bad.pop();
        assert!(Dataset::from_bytes(&bad).is_err());
    }

    #[test]
    fn token_histogram_is_uniform() {
        // chi-square with 255 degrees of freedom; 99% two-sided band is [200.59, 316.92]
        let ds = gen_copy(DEFAULT_COUNT, DEFAULT_SEQ_LEN, DEFAULT_VOCAB, 3).unwrap();
        let mut counts = vec![0f64; 256];
        for b in 0..ds.len() {
            for &t in ds.input(b) {
                counts[t as usize] += 1.0;
            }
        }
        let expected = (DEFAULT_COUNT * DEFAULT_SEQ_LEN) as f64 / 256.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!((200.59..316.92).contains(&chi2), "{chi2}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(gen_copy(0, 10, 256, 1).is_err());
        assert!(gen_copy(1, 10, 70_000, 1).is_err());
        assert!("rotate".parse::<Task>().is_err());
    }
}
