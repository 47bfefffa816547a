//! Browser bindings for a few of the library's analyses.
//!
//! Everything returns flat numbers or strings so the page needs no glue
//! beyond what `wasm-bindgen` generates.

use mhgraph::attngraph::{example_two, walk_matrix, FeedforwardGraph};
use mhgraph::fidelity::compare_head_system;
use mhgraph::mixing::{certified_forward_probability, exact_mixing_time, mc_hitting_proxy, mixing_bound, MixingConfig};
use mhgraph::numerics::RngStream;
use mhgraph::record::AttentionRecord;
use wasm_bindgen::prelude::*;

fn js_err(e: mhgraph::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Minimax fidelity of the four-node fixture with head weights `(β, 1 − β)`.
///
/// Returns `[head 1, head 2, combined]`.
#[wasm_bindgen]
pub fn fixture_fidelity(beta: f64, horizon: usize) -> Result<Vec<f64>, JsError> {
    let hs = example_two().with_weights(vec![beta, 1.0 - beta]).map_err(js_err)?;
    let cmp = compare_head_system(&hs, horizon).map_err(js_err)?;
    Ok(vec![cmp.per_head[0], cmp.per_head[1], cmp.combined])
}

/// A random feedforward graph as `{"n":..,"edges":[[from,to],..]}` (1-based).
#[wasm_bindgen]
pub fn random_graph(n: usize, q: f64, seed: u64) -> Result<String, JsError> {
    if !(2..=64).contains(&n) {
        return Err(JsError::new("n must be between 2 and 64"));
    }
    let g = FeedforwardGraph::random(n, q.clamp(0.0, 1.0), &mut RngStream::new(seed, 0));
    Ok(g.to_json_string())
}

/// `[exact mixing time, bound 2(n−1)/p, certified p]` for a graph document.
/// The exact time is `-1` when the walk has not mixed within the step cap.
#[wasm_bindgen]
pub fn graph_mixing(graph_json: &str, epsilon: f64) -> Result<Vec<f64>, JsError> {
    let g = FeedforwardGraph::from_json_str(graph_json).map_err(js_err)?;
    let w = walk_matrix(&g);
    let cfg = MixingConfig { epsilon, ..MixingConfig::default() };
    let exact = exact_mixing_time(&w, &cfg).map_err(js_err)?;
    let p = certified_forward_probability(&w).map_err(js_err)?;
    let bound = if g.n() > 1 { mixing_bound(g.n(), p).map_err(js_err)? } else { 0.0 };
    Ok(vec![exact.steps().map_or(-1.0, |t| t as f64), bound, p])
}

/// Monte-Carlo hitting times on synthetic causal attention.
///
/// Each head's query `i` puts softmax weight on keys `j ≤ i` with logits
/// `−sharpness·|i − j − 1|` plus noise, so larger `sharpness` means a cleaner
/// one-step-back pattern. Returns the per-start means followed by the overall mean.
#[wasm_bindgen]
pub fn synthetic_hitting_times(
    heads: usize,
    n: usize,
    sharpness: f64,
    samples: usize,
    simulations: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    if heads == 0 || heads > 32 || !(1..=64).contains(&n) || samples == 0 || samples > 200 {
        return Err(JsError::new("heads in 1..=32, n in 1..=64, samples in 1..=200"));
    }
    let records = (0..samples)
        .map(|b| {
            let mut rng = RngStream::derive(seed, &[b as u64]);
            let mut maps = vec![0.0; heads * n * n];
            for h in 0..heads {
                for i in 0..n {
                    let logits: Vec<f64> = (0..=i)
                        .map(|j| -sharpness * (i as f64 - j as f64 - 1.0).abs() + rng.uniform())
                        .collect();
                    let z: f64 = logits.iter().map(|l| l.exp()).sum();
                    for (j, l) in logits.iter().enumerate() {
                        maps[(h * n + i) * n + j] = l.exp() / z;
                    }
                }
            }
            AttentionRecord::new(heads, n, maps, vec![1.0 / heads as f64; heads])
        })
        .collect::<mhgraph::Result<Vec<_>>>()
        .map_err(js_err)?;
    let cfg = MixingConfig { simulations: simulations.clamp(1, 5000), ..MixingConfig::default() };
    let est = mc_hitting_proxy(&records, &cfg, seed).map_err(js_err)?;
    let mut out = est.per_start_mean;
    out.push(est.mean);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_matches_equal_weights() {
        let v = fixture_fidelity(0.5, 100).unwrap();
        assert_eq!(v[0], 0.375);
        assert_eq!(v[1], 0.375);
        assert!((v[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn graph_round_trip() {
        let g = random_graph(8, 0.3, 1).unwrap();
        let m = graph_mixing(&g, 0.25).unwrap();
        assert!(m[0] >= 0.0 && m[0] <= m[1]);
        assert!(m[2] > 0.0);
    }

    #[test]
    fn synthetic_walks_hit_the_end() {
        let v = synthetic_hitting_times(2, 6, 4.0, 3, 50, 9).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v[5], 0.0);
        assert!(v[6] > 0.0);
    }
}
